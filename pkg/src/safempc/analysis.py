"""Grid approximations of reachable sets and CBF superlevel sets, plus benchmark metrics."""
import csv
import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .controllers import SOLVER_INFEASIBLE
from .dynamics import LinearModel

REACHABLE = "reachable"
CBF_SUPERLEVEL = "cbf_superlevel"
SAFE_SET = "safe_set"
INTERSECTION = "intersection"


@dataclass
class GridSpec:
    """Uniform grid over two state dimensions; other dimensions are held at ``base_state``.

    Cell ``(i, j)`` covers ``[lower + i*width, lower + (i+1)*width)`` per axis
    and is represented by its center.
    """

    lower: tuple
    upper: tuple
    counts: tuple
    dims: tuple = (0, 1)
    base_state: np.ndarray = None

    def __post_init__(self):
        self.lower = tuple(float(v) for v in self.lower)
        self.upper = tuple(float(v) for v in self.upper)
        self.counts = tuple(int(c) for c in self.counts)
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.lower) != 2 or len(self.upper) != 2 or len(self.counts) != 2:
            raise ValueError("GridSpec covers exactly two dimensions")
        if min(self.counts) < 2:
            raise ValueError("cell counts must be >= 2")
        if not all(np.isfinite(self.lower + self.upper)):
            raise ValueError("grid bounds must be finite")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("grid lower bounds must be below upper bounds")

    @property
    def widths(self):
        return tuple((hi - lo) / c for lo, hi, c in zip(self.lower, self.upper, self.counts))

    def centers(self, axis):
        lo, w, c = self.lower[axis], self.widths[axis], self.counts[axis]
        return lo + (np.arange(c) + 0.5) * w

    def mesh(self):
        """Cell-center coordinates ``(X, Y)`` with ``indexing="ij"``."""
        return np.meshgrid(self.centers(0), self.centers(1), indexing="ij")

    def cell_of(self, point):
        """Cell index of a 2D point, or ``None`` outside the grid."""
        idx = []
        for a in range(2):
            v = float(point[a])
            if v == self.upper[a]:
                idx.append(self.counts[a] - 1)
                continue
            i = int(np.floor((v - self.lower[a]) / self.widths[a]))
            if not 0 <= i < self.counts[a]:
                return None
            idx.append(i)
        return tuple(idx)

    def states(self, n):
        """Full ``(counts[0]*counts[1], n)`` state array at the cell centers."""
        base = np.zeros(n) if self.base_state is None else np.asarray(self.base_state, float)
        X, Y = self.mesh()
        S = np.tile(base, (X.size, 1))
        S[:, self.dims[0]] = X.ravel()
        S[:, self.dims[1]] = Y.ravel()
        return S


@dataclass
class SetGrid:
    member: np.ndarray
    label: str
    grid: GridSpec = field(repr=False)

    def __post_init__(self):
        self.member = np.asarray(self.member, dtype=bool)
        if self.member.shape != self.grid.counts:
            raise ValueError(f"membership shape {self.member.shape} != grid {self.grid.counts}")

    @property
    def count(self):
        return int(self.member.sum())

    def issubset(self, other):
        return not np.any(self.member & ~other.member)

    def violations(self, other):
        """Cells in ``self`` that are missing from ``other``."""
        return int(np.sum(self.member & ~other.member))

    def intersect(self, other):
        return SetGrid(self.member & other.member, INTERSECTION, self.grid)

    def to_csv(self, path):
        X, Y = self.grid.mesh()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "member"])
            for x, y, m in zip(X.ravel(), Y.ravel(), self.member.ravel()):
                w.writerow([repr(float(x)), repr(float(y)), int(m)])


def input_sequences(u_lb, u_ub, k, levels=None, samples=None, seed=0):
    """Input sequences ``(S, k, m)``: every grid combination or seeded uniform samples."""
    u_lb, u_ub = np.asarray(u_lb, float), np.asarray(u_ub, float)
    m = u_lb.size
    if levels is not None:
        axes = [np.linspace(u_lb[i], u_ub[i], levels) for i in range(m)]
        per_step = np.array(list(itertools.product(*axes)))
        idx = np.array(list(itertools.product(range(len(per_step)), repeat=k)))
        return per_step[idx].reshape(-1, k, m)
    if samples is None:
        raise ValueError("give either levels (exhaustive) or samples (random)")
    rng = np.random.default_rng(seed)
    return rng.uniform(u_lb, u_ub, size=(int(samples), k, m))


def reachable_set_grid(model, x_t, k, x_lb, x_ub, u_lb, u_ub, grid, samples=None, levels=None,
                       seed=0):
    """Cells reached after ``k`` admissible steps from ``x_t`` with every state inside ``X``.

    ``levels`` enumerates a per-axis input grid exhaustively (``levels**(m*k)``
    sequences); otherwise ``samples`` seeded uniform sequences are drawn.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    x_t = np.asarray(x_t, dtype=float)
    member = np.zeros(grid.counts, dtype=bool)
    if k == 0:
        cell = grid.cell_of(x_t[list(grid.dims)])
        if cell is not None:
            member[cell] = True
        return SetGrid(member, REACHABLE, grid)
    useqs = input_sequences(u_lb, u_ub, k, levels, samples, seed)
    x_lo = np.broadcast_to(np.asarray(x_lb, float), x_t.shape).copy()
    x_hi = np.broadcast_to(np.asarray(x_ub, float), x_t.shape).copy()
    dims = np.array(grid.dims, dtype=np.int64)
    g_lo, g_hi = np.array(grid.lower), np.array(grid.upper)
    counts = np.array(grid.counts, dtype=np.int64)
    if isinstance(model, LinearModel):
        marks = kernels.mark_reachable(np.ascontiguousarray(model.A), np.ascontiguousarray(model.B),
                                       x_t, np.ascontiguousarray(useqs), x_lo, x_hi, dims,
                                       g_lo, g_hi, counts)
        return SetGrid(np.asarray(marks, dtype=bool), REACHABLE, grid)
    for seq in useqs:
        x = x_t
        ok = True
        for u in seq:
            x = model.step(x, u)
            if np.any(x < x_lo) or np.any(x > x_hi):
                ok = False
                break
        if ok:
            cell = grid.cell_of(x[list(grid.dims)])
            if cell is not None:
                member[cell] = True
    return SetGrid(member, REACHABLE, grid)


def _values(h, grid, n):
    # position-only barriers evaluate the whole plane at once
    if hasattr(h, "value_grid") and grid.dims == (h.px_index, h.py_index):
        X, Y = grid.mesh()
        return h.value_grid(X, Y)
    return np.array([h.value(s) for s in grid.states(n)]).reshape(grid.counts)


def cbf_superlevel_grid(h, gamma, x_prev, grid):
    """Cells with ``h(x) >= (1 - gamma) h(x_prev)`` at the cell center."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    x_prev = np.asarray(x_prev, dtype=float)
    level = (1.0 - gamma) * h.value(x_prev)
    return SetGrid(_values(h, grid, x_prev.size) >= level, CBF_SUPERLEVEL, grid)


def safe_set_grid(h, grid, n=4):
    return SetGrid(_values(h, grid, n) >= 0.0, SAFE_SET, grid)


@dataclass
class BenchmarkRecord:
    """One benchmark row.

    ``min_distance`` is the minimum Euclidean clearance ``|p - c| - r``.
    ``min_sqrt_h`` is ``sqrt(max(min_t h, 0))``, which for the quadratic
    barrier is the metric the reference table uses.
    """

    controller: str
    N: int
    gamma: float
    status: str
    solve_time_mean: float
    solve_time_std: float
    min_distance: float
    min_sqrt_h: float
    cost_integral: float
    steps: int
    reached_goal: bool
    failure_step: int = None

    FIELDS = ("controller", "N", "gamma", "status", "solve_time_mean", "solve_time_std",
              "min_distance", "min_sqrt_h", "cost_integral", "steps", "reached_goal",
              "failure_step")

    def row(self):
        d = asdict(self)
        return [d[k] for k in self.FIELDS]


def cost_integral(inputs, dt):
    U = np.asarray(inputs, dtype=float)
    return float(np.sum(U * U) * dt)


def compute_benchmark(result, obstacle, dt, controller="", N=None, gamma=None):
    """Metrics of one closed-loop run; infeasible runs report NaN metrics like the reference table."""
    if len(result.states) == 0:
        raise ValueError("empty closed-loop result")
    times = result.solve_times
    infeasible = result.termination == SOLVER_INFEASIBLE
    if infeasible:
        dmin = sqrt_h = cost = np.nan
    else:
        dmin = min(obstacle.clearance(x) for x in result.states)
        hmin = min(obstacle.value(x) for x in result.states)
        sqrt_h = float(np.sqrt(max(hmin, 0.0)))
        cost = cost_integral(result.inputs, dt)
    return BenchmarkRecord(
        controller=controller, N=N, gamma=gamma,
        status="infeas." if infeasible else "solved",
        solve_time_mean=float(times.mean()) if times.size else np.nan,
        solve_time_std=float(times.std()) if times.size else np.nan,
        min_distance=float(dmin), min_sqrt_h=float(sqrt_h), cost_integral=float(cost),
        steps=len(result.inputs), reached_goal=bool(result.reached_goal),
        failure_step=result.failure_step)


def write_benchmark_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BenchmarkRecord.FIELDS)
        for r in records:
            w.writerow(r.row())
