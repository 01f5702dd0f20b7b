"""Output writers: trajectory CSVs, metrics JSON and the run manifest."""
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__

INTEGRATOR_COLUMNS = ("step", "t", "px", "py", "vx", "vy", "ux", "uy", "h", "solve_status",
                      "solve_time_s", "objective")
RACING_STATE_COLUMNS = ("step", "t", "vx", "vy", "phi", "e_phi", "s", "e_y", "a", "delta")


def _fmt(v):
    """Shortest round-trip text for floats; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_integrator_csv(path, result, dt, record_timing=True):
    """One row per visited state; the input and solve columns describe the step taken from it."""
    rows = []
    n_in = len(result.inputs)
    for k, x in enumerate(result.states):
        st = result.stats[k] if k < len(result.stats) else None
        u = result.inputs[k] if k < n_in else (None, None)
        h = result.h[k, 0] if result.h.shape[1] else None
        timing = (st.solve_time if record_timing else 0.0) if st else None
        rows.append([k, k * dt, *x[:4], *u, h, st.status if st else None, timing,
                     st.objective if st else None])
    write_rows(path, INTEGRATOR_COLUMNS, rows)


def write_race_csv(path, result, n_opponents, record_timing=True, every=1):
    """Substep rows; ``solve_time_s`` is filled on rows where a control update starts."""
    header = list(RACING_STATE_COLUMNS) + [f"h_{i}" for i in range(n_opponents)] + ["solve_time_s"]
    nsub = result.substeps_per_control
    K = len(result.inputs)
    rows = []
    for j in range(0, len(result.states), every):
        x = result.states[j]
        u = result.inputs[j] if j < K else (None, None)
        ctrl = j // nsub
        solve = None
        if j % nsub == 0 and ctrl < len(result.solve_times):
            solve = result.solve_times[ctrl] if record_timing else 0.0
        rows.append([j, result.t[j], *x, *u, *result.h[j], solve])
    write_rows(path, header, rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Config snapshot plus every output file with its checksum.

    Written with ``status = "running"`` before a run and rewritten with the
    final status and file list afterwards.
    """

    out_dir: str
    config: dict
    version: str = __version__
    status: str = "running"
    exit_code: int = None
    files: list = field(default_factory=list)

    @property
    def path(self):
        return os.path.join(self.out_dir, "manifest.json")

    def add(self, path):
        self._paths = getattr(self, "_paths", [])
        rel = os.path.relpath(path, self.out_dir)
        if rel not in self._paths:
            self._paths.append(rel)

    def _dump(self):
        write_json(self.path, {"version": self.version, "status": self.status,
                               "exit_code": self.exit_code, "config": self.config,
                               "files": self.files})

    def start(self):
        os.makedirs(self.out_dir, exist_ok=True)
        self._dump()

    def finalize(self, status, exit_code):
        self.status, self.exit_code = status, exit_code
        self.files = []
        for rel in getattr(self, "_paths", []):
            full = os.path.join(self.out_dir, rel)
            if os.path.exists(full):
                self.files.append({"path": rel, "sha256": sha256_file(full),
                                   "bytes": os.path.getsize(full)})
        self._dump()


def verify_manifest(out_dir):
    """List of files whose checksum no longer matches the manifest."""
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        man = json.load(fh)
    return [f["path"] for f in man["files"]
            if sha256_file(os.path.join(out_dir, f["path"])) != f["sha256"]]
