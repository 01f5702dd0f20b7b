"""Plant models: 2D double integrator, curvilinear lateral vehicle, and linear regression fits."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, IdentifiabilityError, SingularStateError

GRAVITY = 9.81


def _vec(x, n, name):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise DimensionError(f"{name} must have shape ({n},), got {x.shape}")
    return x


class DiscreteModel:
    """Discrete-time transition map ``x+ = f(x, u)``.

    Subclasses implement :meth:`step`; :meth:`jacobians` falls back to central
    differences when no analytic form is provided.
    """

    n_states: int
    n_inputs: int

    def step(self, x, u):
        raise NotImplementedError

    def jacobians(self, x, u, eps=1e-6):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        A = np.empty((self.n_states, self.n_states))
        B = np.empty((self.n_states, self.n_inputs))
        for i in range(self.n_states):
            dx = np.zeros_like(x)
            dx[i] = eps
            A[:, i] = (self.step(x + dx, u) - self.step(x - dx, u)) / (2 * eps)
        for i in range(self.n_inputs):
            du = np.zeros_like(u)
            du[i] = eps
            B[:, i] = (self.step(x, u + du) - self.step(x, u - du)) / (2 * eps)
        return A, B


class LinearModel(DiscreteModel):
    """Time-invariant ``x+ = A x + B u``, optionally carrying the RMS residual of a fit."""

    def __init__(self, A, B, fit_residual=0.0):
        self.A = np.array(A, dtype=float)
        self.B = np.array(B, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise DimensionError(f"B must have {self.A.shape[0]} rows, got {self.B.shape}")
        self.A.setflags(write=False)
        self.B.setflags(write=False)
        self.n_states, self.n_inputs = self.B.shape
        self.fit_residual = float(fit_residual)

    def step(self, x, u):
        x = _vec(x, self.n_states, "x")
        u = _vec(u, self.n_inputs, "u")
        return self.A @ x + self.B @ u

    def jacobians(self, x, u, eps=None):
        return self.A, self.B

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def rms_residual(self, states, inputs):
        """RMS one-step prediction error on a trajectory (per-sample Euclidean norm)."""
        X = np.asarray(states, dtype=float)
        U = np.asarray(inputs, dtype=float)
        err = X[1:] - X[:-1] @ self.A.T - U @ self.B.T
        return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


class DoubleIntegratorModel(LinearModel):
    """Planar double integrator with zero-order-hold inputs.

    State ``[px, py, vx, vy]``, input ``[ax, ay]``.
    """

    def __init__(self, dt=0.2):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = float(dt)
        A = np.eye(4)
        A[0, 2] = A[1, 3] = dt
        B = np.zeros((4, 2))
        B[0, 0] = B[1, 1] = 0.5 * dt**2
        B[2, 0] = B[3, 1] = dt
        super().__init__(A, B)


def double_integrator_step(model, x, u):
    return model.step(x, u)


@dataclass(frozen=True)
class VehicleParams:
    """Lateral vehicle parameters (SI units). Defaults describe a 1/10-scale car."""

    m: float = 1.98
    Iz: float = 0.024
    lf: float = 0.125
    lr: float = 0.125
    Bf: float = 1.0
    Br: float = 1.0
    Cf: float = 1.25
    Cr: float = 1.25
    Df: float = 0.8 * 1.98 * GRAVITY * 0.5
    Dr: float = 0.8 * 1.98 * GRAVITY * 0.5
    dt_sim: float = 0.001

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lr", "Df", "Dr", "dt_sim"):
            if not getattr(self, name) > 0:
                raise ValueError(f"vehicle parameter {name} must be positive")

    def as_array(self):
        return np.array([self.m, self.Iz, self.lf, self.lr, self.Bf, self.Br,
                         self.Cf, self.Cr, self.Df, self.Dr])


# state / input layout for the vehicle
VX, VY, PHI, E_PHI, S, E_Y = range(6)
ACCEL, STEER = range(2)


def tire_lateral_force(params, slip_angle, axle):
    """Pacejka lateral force ``2 D sin(C arctan(B alpha))`` for the ``"front"`` or ``"rear"`` axle."""
    if axle == "front":
        return kernels.pacejka(params.Df, params.Cf, params.Bf, float(slip_angle))
    if axle == "rear":
        return kernels.pacejka(params.Dr, params.Cr, params.Br, float(slip_angle))
    raise ValueError(f"axle must be 'front' or 'rear', got {axle!r}")


def _raise_for_status(status, x, kappa):
    if status == kernels.BAD_VX:
        raise SingularStateError(f"vx must be positive, got vx={x[VX]}")
    if status == kernels.BAD_CURVATURE:
        raise SingularStateError(f"1 - kappa*e_y vanishes (kappa={kappa}, e_y={x[E_Y]})")


def vehicle_step(params, x, u, kappa, dt=None):
    """Advance the vehicle one explicit-Euler step at curvature ``kappa``.

    ``dt`` defaults to ``params.dt_sim``.
    """
    x = _vec(x, 6, "vehicle state")
    u = _vec(u, 2, "vehicle input")
    dt = params.dt_sim if dt is None else dt
    new, status = kernels.vehicle_euler(params.as_array(), x, float(u[ACCEL]),
                                        float(u[STEER]), float(kappa), float(dt))
    _raise_for_status(status, x, kappa)
    return np.array(new)


@dataclass(frozen=True)
class PidGains:
    k1: float = 0.8
    k2: float = 0.8
    k3: float = 2.0


def pid_tracking_control(gains, x, v_d):
    """Centerline tracker: steer on lateral/heading error, accelerate toward ``v_d``."""
    delta = -gains.k1 * x[E_Y] - gains.k2 * x[E_PHI]
    a = gains.k3 * (v_d - x[VX])
    return np.array([a, delta])


def fit_linear_model(states, inputs, fixed_dims=(), rcond=1e-10):
    """Least-squares fit of ``x+ = A x + B u`` from one trajectory.

    Parameters
    ----------
    states : (T+1, n) array
    inputs : (T, m) array
    fixed_dims : state indices whose column of A is pinned to the unit vector.
        Use this for translation-invariant coordinates (e.g. arc length) that
        should not act as regressors.
    rcond : relative singular-value threshold for the identifiability check.

    Raises
    ------
    IdentifiabilityError
        If there are fewer than ``n + m + 1`` transitions or the regressor
        matrix is rank deficient. The exception carries the deficient
        directions in regressor space.
    """
    X = np.asarray(states, dtype=float)
    U = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or U.ndim != 2 or X.shape[0] != U.shape[0] + 1:
        raise DimensionError("states must be (T+1, n) and inputs (T, m)")
    T, n = U.shape[0], X.shape[1]
    m = U.shape[1]
    if T < n + m + 1:
        raise IdentifiabilityError(
            f"need at least {n + m + 1} transitions to fit n={n}, m={m}; got {T}")
    fixed = sorted(set(int(d) for d in fixed_dims))
    free = [i for i in range(n) if i not in fixed]
    Z = np.hstack([X[:-1, free], U])
    Y = X[1:].copy()
    for d in fixed:
        Y[:, d] -= X[:-1, d]
    _, sv, Vt = np.linalg.svd(Z, full_matrices=False)
    deficient = sv <= rcond * max(sv[0], 1e-300)
    if np.any(deficient):
        names = [f"x{i}" for i in free] + [f"u{j}" for j in range(m)]
        dirs = Vt[deficient]
        desc = "; ".join(
            " + ".join(f"{c:.3g}*{nm}" for c, nm in zip(v, names) if abs(c) > 1e-3)
            for v in dirs)
        raise IdentifiabilityError(f"regressor matrix is rank deficient along: {desc}", dirs)
    W, *_ = np.linalg.lstsq(Z, Y, rcond=None)
    A = np.zeros((n, n))
    A[:, free] = W[: len(free)].T
    for d in fixed:
        A[d, d] += 1.0
    B = W[len(free):].T
    model = LinearModel(A, B)
    model.fit_residual = model.rms_residual(X, U)
    return model
