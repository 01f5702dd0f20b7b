"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is run on identical inputs by both backends; the outputs are
compared before timing so a speedup is never reported for a wrong answer.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from safempc import _kernels_py
from safempc.dynamics import DoubleIntegratorModel, VehicleParams
from safempc.racing import default_track

try:
    from safempc import _ckernels
except ImportError:
    _ckernels = None


def _cases(seed):
    rng = np.random.default_rng(seed)
    track = default_track()
    p = VehicleParams().as_array()
    x = np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.05])
    model = DoubleIntegratorModel(0.2)
    useqs = rng.uniform(-1, 1, size=(20000, 3, 2))
    lim = 5.0 * np.ones(4)
    x_t = np.array([-4.0, -4.0, 0.5, 0.5])
    reach_args = (model.A, model.B, x_t, useqs, -lim, lim, np.array([0, 1]),
                  np.array([-5.0, -5.0]), np.array([5.0, 5.0]), np.array([200, 200]))
    integ_args = (p, x, 0.2, 0.05, track.ends, track.kappas, track.length, 1e-3, 1000)
    return {
        "vehicle_integrate (1000 substeps)": ("vehicle_integrate", integ_args),
        "mark_reachable (20000 x 3 steps)": ("mark_reachable", reach_args),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=1e-12, atol=1e-12)


def run(repeat=5, seed=0):
    rows = []
    for label, (name, args) in _cases(seed).items():
        row = {"kernel": label}
        py_fn = getattr(_kernels_py, name)
        row["python_s"] = min(timeit.repeat(lambda: py_fn(*args), number=1, repeat=repeat))
        if _ckernels is not None:
            c_fn = getattr(_ckernels, name)
            row["match"] = bool(_same(py_fn(*args), c_fn(*args)))
            row["cython_s"] = min(timeit.repeat(lambda: c_fn(*args), number=1, repeat=repeat))
            row["speedup"] = row["python_s"] / row["cython_s"]
        rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; timing the Python backend only", file=sys.stderr)
    rows = run(args.repeat, args.seed)
    print(f"{'kernel':36s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s} match")
    for r in rows:
        c = f"{1e3 * r['cython_s']:12.3f}" if "cython_s" in r else f"{'-':>12s}"
        s = f"{r['speedup']:8.1f}" if "speedup" in r else f"{'-':>8s}"
        print(f"{r['kernel']:36s} {1e3 * r['python_s']:12.3f} {c} {s} {r.get('match', '-')}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r.get("match", True) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
