"""Barrier functions, the discrete CBF decrease condition, and distance constraints.

A barrier is any object with ``value(x)``, ``gradient(x)`` and ``hessian(x)``
taking the full plant state; its safe set is ``{x : value(x) >= 0}``.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CircularObstacleCbf:
    """``h(x) = (px - x_obs)^2 + (py - y_obs)^2 - r_obs^2`` on the position components of ``x``."""

    x_obs: float
    y_obs: float
    r_obs: float
    px_index: int = 0
    py_index: int = 1

    def __post_init__(self):
        if not self.r_obs > 0:
            raise ValueError(f"r_obs must be positive, got {self.r_obs}")

    def value(self, x):
        dx = x[self.px_index] - self.x_obs
        dy = x[self.py_index] - self.y_obs
        return float(dx * dx + dy * dy - self.r_obs**2)

    def gradient(self, x):
        g = np.zeros(len(x))
        g[self.px_index] = 2.0 * (x[self.px_index] - self.x_obs)
        g[self.py_index] = 2.0 * (x[self.py_index] - self.y_obs)
        return g

    def hessian(self, x):
        H = np.zeros((len(x), len(x)))
        H[self.px_index, self.px_index] = 2.0
        H[self.py_index, self.py_index] = 2.0
        return H

    def clearance(self, x):
        """Euclidean distance from the obstacle boundary (negative inside)."""
        return float(np.hypot(x[self.px_index] - self.x_obs, x[self.py_index] - self.y_obs)
                     - self.r_obs)

    def value_grid(self, px, py):
        return (px - self.x_obs) ** 2 + (py - self.y_obs) ** 2 - self.r_obs**2


def eval_circular_h(cbf, x):
    return cbf.value(x)


def wrap_signed(ds, length):
    """Wrap an arc-length difference into ``(-length/2, length/2]``; ``length=None`` leaves it alone."""
    if length is None:
        return ds
    half = 0.5 * length
    w = np.mod(ds + half, length) - half
    return np.where(w == -half, half, w) if np.ndim(w) else (half if w == -half else float(w))


@dataclass(frozen=True)
class RectangularCarCbf:
    """Quartic car-to-car barrier in curvilinear coordinates.

    ``h = (s - s_i)^4 / (2 l1)^4 + (e_y - e_y_i)^4 / (2 l2)^4 - 1`` where ``l1``
    and ``l2`` are the half-length and half-width of the cars.
    """

    l1: float = 0.2
    l2: float = 0.1
    s_index: int = 4
    ey_index: int = 5

    def __post_init__(self):
        if not (self.l1 > 0 and self.l2 > 0):
            raise ValueError("l1 and l2 must be positive")

    def h(self, ds, dey):
        return (ds / (2 * self.l1)) ** 4 + (dey / (2 * self.l2)) ** 4 - 1.0

    def against(self, s_opp, ey_opp, track_length=None):
        """Barrier over the ego state against an opponent frozen at ``(s_opp, ey_opp)``."""
        return OpponentBarrier(self, float(s_opp), float(ey_opp), track_length)


def eval_quartic_h(cbf, ego, opp, track_length=None):
    ds = wrap_signed(ego[0] - opp[0], track_length)
    return float(cbf.h(ds, ego[1] - opp[1]))


@dataclass(frozen=True)
class OpponentBarrier:
    shape: RectangularCarCbf
    s_opp: float
    ey_opp: float
    track_length: float = None

    def _deltas(self, x):
        ds = wrap_signed(x[self.shape.s_index] - self.s_opp, self.track_length)
        return ds, x[self.shape.ey_index] - self.ey_opp

    def value(self, x):
        ds, dey = self._deltas(x)
        return float(self.shape.h(ds, dey))

    def gradient(self, x):
        ds, dey = self._deltas(x)
        a, b = 2 * self.shape.l1, 2 * self.shape.l2
        g = np.zeros(len(x))
        g[self.shape.s_index] = 4 * ds**3 / a**4
        g[self.shape.ey_index] = 4 * dey**3 / b**4
        return g

    def hessian(self, x):
        ds, dey = self._deltas(x)
        a, b = 2 * self.shape.l1, 2 * self.shape.l2
        H = np.zeros((len(x), len(x)))
        H[self.shape.s_index, self.shape.s_index] = 12 * ds**2 / a**4
        H[self.shape.ey_index, self.shape.ey_index] = 12 * dey**2 / b**4
        return H


@dataclass(frozen=True)
class CbfCondition:
    """Discrete CBF decrease condition ``h(x+) >= (1 - gamma) h(x)``."""

    gamma: float

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


def cbf_constraint_residual(cond, h_curr, h_next):
    """``h_next - (1 - gamma) h_curr``; the condition holds iff this is nonnegative."""
    return h_next - (1.0 - cond.gamma) * h_curr


def distance_constraint_residual(g, x):
    return g.value(x)
