"""Shared fixtures; the expensive closed-loop runs are computed once per session."""
import csv
import json

import numpy as np
import pytest

from safempc import cli
from safempc.config import builtin_config, resolve
from safempc.controllers import run_closed_loop
from safempc.runner import race_from_config
from safempc.scenarios import IntegratorScenario


@pytest.fixture(scope="session")
def scenario():
    return IntegratorScenario()


def closed_loop(sc, kind, N=None, gamma=None, max_steps=100, stop_at_goal=True):
    ctl = sc.controller(kind, N, gamma)
    return run_closed_loop(ctl, sc.model, sc.x0, sc.goal, max_steps=max_steps,
                           barriers=[sc.cbf], stop_at_goal=stop_at_goal, keep_solutions=True)


@pytest.fixture(scope="session")
def integrator_runs(scenario):
    """Closed loops used by several suites, keyed by a short label."""
    return {
        "cbf_N8_g0.4": closed_loop(scenario, "mpc_cbf", 8, 0.4),
        "cbf_N1_g0.4": closed_loop(scenario, "mpc_cbf", 1, 0.4),
        "dclf_g0.4": closed_loop(scenario, "dclf_dcbf", gamma=0.4),
        "cbf_N8_g1": closed_loop(scenario, "mpc_cbf", 8, 1.0),
        "dc_N8": closed_loop(scenario, "mpc_dc", 8),
    }


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def bench_run(tmp_path_factory):
    """The builtin benchmark matrix run once through the CLI."""
    out = tmp_path_factory.mktemp("bench")
    code = cli.main(["bench", "--out", str(out), "--log-level", "WARNING"])
    with open(out / "bench_report.json") as fh:
        report = json.load(fh)
    return {"exit": code, "dir": out, "rows": _read_csv(out / "bench.csv"),
            "records": _read_csv(out / "bench_records.csv"), "report": report}


@pytest.fixture(scope="session")
def race_run():
    """Identification plus the two-opponent race from the builtin racing config."""
    cfg = resolve(builtin_config("racing"), output_dir="unused")
    return cfg, race_from_config(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
