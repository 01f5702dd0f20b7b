"""Finite-horizon optimal control problems and the SQP solver for them.

Decision vector layout (simultaneous parameterization)::

    z = [x_0, x_1, ..., x_N, u_0, ..., u_{N-1}]

Each SQP iteration linearizes dynamics and constraints at the current
iterate, eliminates the state steps through the linearized dynamics
(condensing), and solves the resulting elastic QP with :class:`ActiveSetQP`.
Globalization uses an l1 exact-penalty merit function with backtracking.
"""
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DimensionError, NumericalFailure
from .qp import OPTIMAL, ActiveSetQP

SOLVED = "solved"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"

# full steps allowed when the merit line search is limited by roundoff
_MAX_CORRECTIONS = 5


class StageConstraint:
    """Scalar inequality ``c(x_k, x_{k+1}, u_k) >= 0`` attached to horizon step ``k``.

    Subclasses implement :meth:`value` and :meth:`gradient` over the stacked
    argument ``w = [x_k, x_{k+1}, u_k]``; :meth:`hessian` may return ``None``
    when curvature is unavailable.
    """

    k = 0

    def value(self, x, xn, u):
        raise NotImplementedError

    def gradient(self, x, xn, u):
        raise NotImplementedError

    def hessian(self, x, xn, u):
        return None


class CbfStageConstraint(StageConstraint):
    """``h_next(x_{k+1}) - (1 - gamma) h_curr(x_k) >= 0``."""

    def __init__(self, k, gamma, h_curr, h_next=None):
        self.k = k
        self.gamma = float(gamma)
        self.h_curr = h_curr
        self.h_next = h_curr if h_next is None else h_next

    def value(self, x, xn, u):
        return self.h_next.value(xn) - (1.0 - self.gamma) * self.h_curr.value(x)

    def gradient(self, x, xn, u):
        return np.concatenate([-(1.0 - self.gamma) * self.h_curr.gradient(x),
                               self.h_next.gradient(xn), np.zeros(len(u))])

    def hessian(self, x, xn, u):
        n, m = len(x), len(u)
        H = np.zeros((2 * n + m, 2 * n + m))
        H[:n, :n] = -(1.0 - self.gamma) * self.h_curr.hessian(x)
        H[n:2 * n, n:2 * n] = self.h_next.hessian(xn)
        return H


class StateConstraint(StageConstraint):
    """``g(x_k) >= 0`` on the current-step state."""

    def __init__(self, k, g):
        self.k = k
        self.g = g

    def value(self, x, xn, u):
        return self.g.value(x)

    def gradient(self, x, xn, u):
        return np.concatenate([self.g.gradient(x), np.zeros(len(xn) + len(u))])

    def hessian(self, x, xn, u):
        n, m = len(x), len(u)
        H = np.zeros((2 * n + m, 2 * n + m))
        H[:n, :n] = self.g.hessian(x)
        return H


class LinearStageConstraint(StageConstraint):
    """``a_x'x_k + a_xn'x_{k+1} + a_u'u_k + b >= 0``."""

    def __init__(self, k, a_x, a_xn, a_u, b=0.0):
        self.k = k
        self.a = np.concatenate([np.asarray(a_x, float), np.asarray(a_xn, float),
                                 np.asarray(a_u, float)])
        self.b = float(b)

    def value(self, x, xn, u):
        return float(self.a @ np.concatenate([x, xn, u]) + self.b)

    def gradient(self, x, xn, u):
        return self.a.copy()

    def hessian(self, x, xn, u):
        return np.zeros((self.a.size, self.a.size))


@dataclass
class OcpSpec:
    """One finite-horizon problem: quadratic costs, boxes, dynamics, stage constraints.

    Stage cost ``(x-x_ref)'Q(x-x_ref) + (u-u_ref)'R(u-u_ref)``, terminal cost
    ``(x_N-x_ref)'P(x_N-x_ref)``. State boxes apply to ``x_1..x_{N-1}``, the
    terminal box to ``x_N``; ``x_0`` is pinned to ``x0``.
    """

    model: object
    N: int
    x0: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    x_lb: np.ndarray = None
    x_ub: np.ndarray = None
    u_lb: np.ndarray = None
    u_ub: np.ndarray = None
    xf_lb: np.ndarray = None
    xf_ub: np.ndarray = None
    x_ref: np.ndarray = None
    u_ref: np.ndarray = None
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        n, m = self.model.n_states, self.model.n_inputs
        if int(self.N) < 1:
            raise ValueError(f"horizon N must be >= 1, got {self.N}")
        self.N = int(self.N)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (n,):
            raise DimensionError(f"x0 must have shape ({n},)")
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        for name, M, k in (("Q", self.Q, n), ("R", self.R, m), ("P", self.P, n)):
            if M.shape != (k, k):
                raise DimensionError(f"{name} must be {k}x{k}")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.P + self.P.T))) < -1e-12:
            raise ValueError("P must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise ValueError("R must be positive definite")

        def vec(v, k, fill):
            return np.full(k, fill) if v is None else np.asarray(v, dtype=float).reshape(k)

        self.x_lb = vec(self.x_lb, n, -np.inf)
        self.x_ub = vec(self.x_ub, n, np.inf)
        self.u_lb = vec(self.u_lb, m, -np.inf)
        self.u_ub = vec(self.u_ub, m, np.inf)
        self.xf_lb = self.x_lb.copy() if self.xf_lb is None else vec(self.xf_lb, n, 0)
        self.xf_ub = self.x_ub.copy() if self.xf_ub is None else vec(self.xf_ub, n, 0)
        self.x_ref = vec(self.x_ref, n, 0.0)
        self.u_ref = vec(self.u_ref, m, 0.0)
        for lo, hi, name in ((self.x_lb, self.x_ub, "X"), (self.u_lb, self.u_ub, "U"),
                             (self.xf_lb, self.xf_ub, "X_f")):
            if np.any(lo > hi):
                raise ValueError(f"{name} lower bound exceeds upper bound")
        for c in self.constraints:
            if not 0 <= c.k < self.N:
                raise ValueError(f"stage constraint step {c.k} outside 0..{self.N - 1}")

    @property
    def n(self):
        return self.model.n_states

    @property
    def m(self):
        return self.model.n_inputs

    @property
    def nz(self):
        return (self.N + 1) * self.n + self.N * self.m

    def pack(self, states, inputs):
        return np.concatenate([np.asarray(states, float).ravel(), np.asarray(inputs, float).ravel()])

    def unpack(self, z):
        nx = (self.N + 1) * self.n
        return z[:nx].reshape(self.N + 1, self.n), z[nx:].reshape(self.N, self.m)

    def state_slice(self, k):
        return slice(k * self.n, (k + 1) * self.n)

    def input_slice(self, k):
        off = (self.N + 1) * self.n
        return slice(off + k * self.m, off + (k + 1) * self.m)

    def constraint_index(self, c):
        n, m = self.n, self.m
        base = np.arange(n)
        return np.concatenate([c.k * n + base, (c.k + 1) * n + base,
                               (self.N + 1) * n + c.k * m + np.arange(m)])

    def objective(self, z):
        X, U = self.unpack(z)
        dx = X - self.x_ref
        du = U - self.u_ref
        J = np.einsum("ki,ij,kj->", dx[:-1], self.Q, dx[:-1])
        J += np.einsum("ki,ij,kj->", du, self.R, du)
        J += dx[-1] @ self.P @ dx[-1]
        return float(J)

    def objective_gradient(self, z):
        X, U = self.unpack(z)
        dx = X - self.x_ref
        gx = np.empty_like(X)
        gx[:-1] = dx[:-1] @ (self.Q + self.Q.T)
        gx[-1] = dx[-1] @ (self.P + self.P.T)
        gu = (U - self.u_ref) @ (self.R + self.R.T)
        return np.concatenate([gx.ravel(), gu.ravel()])

    def objective_hessian(self):
        N = self.N
        blocks = [self.Q + self.Q.T] * N + [self.P + self.P.T] + [self.R + self.R.T] * N
        H = np.zeros((self.nz, self.nz))
        off = 0
        for B in blocks:
            k = B.shape[0]
            H[off:off + k, off:off + k] = B
            off += k
        return H

    def constraint_values(self, z):
        X, U = self.unpack(z)
        return np.array([c.value(X[c.k], X[c.k + 1], U[c.k]) for c in self.constraints])

    def box_violation(self, z):
        """Per-step state/input box violations (nonnegative arrays)."""
        X, U = self.unpack(z)
        vx = np.zeros_like(X)
        lo = np.vstack([np.tile(self.x_lb, (self.N - 1, 1)), self.xf_lb[None]])
        hi = np.vstack([np.tile(self.x_ub, (self.N - 1, 1)), self.xf_ub[None]])
        vx[1:] = np.maximum(lo - X[1:], 0) + np.maximum(X[1:] - hi, 0)
        vu = np.maximum(self.u_lb - U, 0) + np.maximum(U - self.u_ub, 0)
        return vx, vu

    def dynamics_defects(self, z):
        X, U = self.unpack(z)
        d = np.empty((self.N + 1, self.n))
        d[0] = X[0] - self.x0
        for k in range(self.N):
            d[k + 1] = X[k + 1] - self.model.step(X[k], U[k])
        return d

    def max_violation(self, z):
        vx, vu = self.box_violation(z)
        c = self.constraint_values(z)
        parts = [np.abs(self.dynamics_defects(z)).max(), vx.max(initial=0.0), vu.max(initial=0.0)]
        if c.size:
            parts.append(max(0.0, -c.min()))
        return float(max(parts))

    def rollout(self, inputs):
        U = np.asarray(inputs, dtype=float).reshape(self.N, self.m)
        X = np.empty((self.N + 1, self.n))
        X[0] = self.x0
        for k in range(self.N):
            X[k + 1] = self.model.step(X[k], U[k])
        return X


@dataclass
class SolverConfig:
    opt_tol: float = 1e-6
    feas_tol: float = 1e-8
    max_iter: int = 100
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-10
    penalty_init: float = 10.0
    penalty_max: float = 1e10
    slack_curvature: float = 1e-2
    step_tol: float = 1e-9
    stall_tol: float = 1e-6
    hessian: str = "exact"
    log: object = None

    def __post_init__(self):
        if not (self.opt_tol > 0 and self.feas_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.hessian not in ("exact", "gauss_newton"):
            raise ValueError("hessian must be 'exact' or 'gauss_newton'")


@dataclass
class OcpSolution:
    status: str
    inputs: np.ndarray
    states: np.ndarray
    objective: float
    kkt_residual: float
    max_violation: float
    iterations: int
    wall_time: float
    multipliers: np.ndarray = None


def shift_solution(solution):
    """Shift an open-loop solution one step: drop the first input, repeat the last."""
    U = np.asarray(solution.inputs)
    return np.vstack([U[1:], U[-1:]])


def _project_psd(H, floor):
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    if w.min() >= floor:
        return H
    w = np.maximum(w, floor)
    return (V * w) @ V.T


class SqpSolver:
    """SQP solver for :class:`OcpSpec` instances.

    The instance keeps the QP working set of its last solve to warm start the
    next one, so it must not be shared by concurrent solves.
    """

    def __init__(self, config=None):
        self.config = config or SolverConfig()
        self.qp = ActiveSetQP()
        self._working = None

    def _log(self, msg):
        if self.config.log is not None:
            self.config.log.write(msg + "\n")

    def solve(self, spec, warm_start=None):
        t0 = time.perf_counter()
        cfg = self.config
        n, m, N = spec.n, spec.m, spec.N
        nc = len(spec.constraints)

        if warm_start is None:
            U = np.tile(np.clip(spec.u_ref, spec.u_lb, spec.u_ub), (N, 1))
            X = spec.rollout(U)
        else:
            states = None
            if isinstance(warm_start, OcpSolution):
                U, states = warm_start.inputs, warm_start.states
            elif isinstance(warm_start, tuple):
                states, U = warm_start
            else:
                U = warm_start
            U = np.clip(np.asarray(U, dtype=float).reshape(N, m), spec.u_lb, spec.u_ub)
            if states is None:
                X = spec.rollout(U)
            else:
                X = np.array(states, dtype=float).reshape(N + 1, n)
                X[0] = spec.x0
        z = spec.pack(X, U)

        H_cost = spec.objective_hessian()
        lam = np.zeros(nc)
        rho = cfg.penalty_init
        status = MAX_ITER
        it = 0
        corrections = 0
        try:
            for it in range(1, cfg.max_iter + 1):
                qp_data = self._linearize(spec, z, lam, H_cost)
                viol = self._l1_violation(spec, z)
                res, dz, slack_sum, lam_qp, rho = self._solve_qp(spec, qp_data, rho, viol)
                f = spec.objective(z)
                gf = qp_data["grad"]
                merit = f + rho * viol
                D = float(gf @ dz) + rho * (slack_sum - viol)
                step_norm = np.max(np.abs(dz))
                zscale = 1.0 + np.max(np.abs(z))
                self._log(f"{it:3d} f={f:.10g} viol={viol:.3e} |dz|={step_norm:.3e} rho={rho:.1e}")

                # The linearization is consistent, so a short step that still
                # reduces violation is roundoff-limited rather than stalled.
                correctable = (viol > cfg.feas_tol and slack_sum <= cfg.feas_tol
                               and corrections < _MAX_CORRECTIONS
                               and self._l1_violation(spec, z + dz) < viol)
                if step_norm <= cfg.step_tol * zscale:
                    if correctable:
                        corrections += 1
                        z = z + dz
                        lam = lam_qp
                        continue
                    lam = lam_qp
                    status = self._classify(spec, z, lam)
                    break
                if (step_norm <= cfg.stall_tol * zscale and viol <= cfg.feas_tol
                        and self._kkt(spec, z) <= cfg.opt_tol):
                    # progress below merit roundoff but already optimal
                    lam = lam_qp
                    status = SOLVED
                    break

                alpha = 1.0
                while True:
                    z_try = z + alpha * dz
                    merit_try = spec.objective(z_try) + rho * self._l1_violation(spec, z_try)
                    if merit_try <= merit + cfg.armijo * alpha * min(D, 0.0) + 1e-14 * abs(merit):
                        break
                    alpha *= cfg.backtrack
                    if alpha < cfg.min_step:
                        break
                if alpha < cfg.min_step:
                    if correctable:
                        corrections += 1
                        z = z + dz
                        lam = lam_qp
                        continue
                    # No merit decrease along dz: treat the current point as stationary.
                    lam = lam_qp
                    status = self._classify(spec, z, lam)
                    break
                self._log(f"    alpha={alpha:.3e}")
                z = z_try
                lam = lam_qp if alpha == 1.0 else (1 - alpha) * lam + alpha * lam_qp
        except NumericalFailure:
            status = NUMERICAL_FAILURE

        X, U = spec.unpack(z)
        sol = OcpSolution(status, U.copy(), X.copy(), spec.objective(z), np.nan,
                          spec.max_violation(z), it, 0.0, lam.copy())
        sol.kkt_residual = kkt_residual(spec, sol)
        if status == SOLVED and not (sol.kkt_residual <= cfg.opt_tol
                                     and sol.max_violation <= cfg.feas_tol):
            sol.status = MAX_ITER if it >= cfg.max_iter else NUMERICAL_FAILURE
        sol.wall_time = time.perf_counter() - t0
        return sol

    @staticmethod
    def _kkt(spec, z):
        X, U = spec.unpack(z)
        return kkt_residual(spec, (X, U))

    def _classify(self, spec, z, lam):
        if spec.max_violation(z) > self.config.feas_tol:
            return INFEASIBLE
        return SOLVED

    @staticmethod
    def _l1_violation(spec, z):
        vx, vu = spec.box_violation(z)
        c = spec.constraint_values(z)
        v = np.abs(spec.dynamics_defects(z)).sum() + vx.sum() + vu.sum()
        if c.size:
            v += np.maximum(-c, 0.0).sum()
        return float(v)

    def _linearize(self, spec, z, lam, H_cost):
        n, m, N = spec.n, spec.m, spec.N
        X, U = spec.unpack(z)
        nz, nu_tot = spec.nz, N * m
        W = H_cost.copy()
        nc = len(spec.constraints)
        G = np.zeros((nc, nz))
        cval = np.zeros(nc)
        for j, c in enumerate(spec.constraints):
            idx = spec.constraint_index(c)
            args = (X[c.k], X[c.k + 1], U[c.k])
            cval[j] = c.value(*args)
            G[j, idx] = c.gradient(*args)
            if self.config.hessian == "exact" and lam[j] != 0.0:
                Hc = c.hessian(*args)
                if Hc is not None:
                    W[np.ix_(idx, idx)] -= lam[j] * Hc

        # condensing: state steps as affine functions of input steps
        T = np.zeros((nz, nu_tot))
        zc = np.zeros(nz)
        T[(N + 1) * n:, :] = np.eye(nu_tot)
        zc[:n] = spec.x0 - X[0]
        Tx = T[: (N + 1) * n].reshape(N + 1, n, nu_tot)
        cx = zc[: (N + 1) * n].reshape(N + 1, n)
        for k in range(N):
            A, B = spec.model.jacobians(X[k], U[k])
            r = spec.model.step(X[k], U[k]) - X[k + 1]
            Tx[k + 1] = A @ Tx[k]
            Tx[k + 1][:, k * m:(k + 1) * m] += B
            cx[k + 1] = A @ cx[k] + r
        return dict(X=X, U=U, W=W, G=G, cval=cval, T=T, zc=zc,
                    grad=spec.objective_gradient(z))

    def _solve_qp(self, spec, q, rho, viol):
        cfg = self.config
        n, m, N = spec.n, spec.m, spec.N
        T, zc, W = q["T"], q["zc"], q["W"]
        nu_tot = N * m
        H_red = T.T @ W @ T
        g_red = T.T @ (W @ zc + q["grad"])
        scale = max(1.0, np.max(np.abs(np.diag(H_red))))
        H_red = _project_psd(H_red, 1e-8 * scale)

        # Rows: nonlinear constraints, then state boxes (lower, upper) for x_1..x_N.
        G_red = q["G"] @ T
        c_lin = q["cval"] + q["G"] @ zc
        lo = np.vstack([np.tile(spec.x_lb, (N - 1, 1)), spec.xf_lb[None]]).ravel()
        hi = np.vstack([np.tile(spec.x_ub, (N - 1, 1)), spec.xf_ub[None]]).ravel()
        Xc = (q["X"] + zc[: (N + 1) * n].reshape(N + 1, n))[1:].ravel()
        Tb = T[n:(N + 1) * n]
        boxed = np.flatnonzero(np.isfinite(lo) | np.isfinite(hi))
        nc, nb = G_red.shape[0], boxed.size
        low_rows = [b for b in boxed if np.isfinite(lo[b])]
        up_rows = [b for b in boxed if np.isfinite(hi[b])]
        slack_of = {b: i for i, b in enumerate(boxed)}
        nvar = nu_tot + nc + nb
        nrow = nc + len(low_rows) + len(up_rows)
        C = np.zeros((nrow, nvar))
        dvec = np.zeros(nrow)
        C[:nc, :nu_tot] = G_red
        C[:nc, nu_tot:nu_tot + nc] = np.eye(nc)
        dvec[:nc] = -c_lin
        r = nc
        for b in low_rows:
            C[r, :nu_tot] = Tb[b]
            C[r, nu_tot + nc + slack_of[b]] = 1.0
            dvec[r] = lo[b] - Xc[b]
            r += 1
        for b in up_rows:
            C[r, :nu_tot] = -Tb[b]
            C[r, nu_tot + nc + slack_of[b]] = 1.0
            dvec[r] = Xc[b] - hi[b]
            r += 1

        U = q["U"]
        lb = np.concatenate([(spec.u_lb - U).ravel(), np.zeros(nc + nb)])
        ub = np.concatenate([(spec.u_ub - U).ravel(), np.full(nc + nb, np.inf)])
        lb[:nu_tot] = np.minimum(lb[:nu_tot], 0.0)
        ub[:nu_tot] = np.maximum(ub[:nu_tot], 0.0)

        while True:
            H = np.zeros((nvar, nvar))
            H[:nu_tot, :nu_tot] = H_red
            H[nu_tot:, nu_tot:] = cfg.slack_curvature * np.eye(nc + nb)
            g = np.concatenate([g_red, np.full(nc + nb, rho)])
            y0 = np.zeros(nvar)
            y0[:nu_tot] = np.clip(0.0, lb[:nu_tot], ub[:nu_tot])
            viol_rows = np.maximum(dvec - C[:, :nu_tot] @ y0[:nu_tot], 0.0)
            y0[nu_tot:nu_tot + nc] = viol_rows[:nc]
            for i, b in enumerate(low_rows):
                s = nu_tot + nc + slack_of[b]
                y0[s] = max(y0[s], viol_rows[nc + i])
            for i, b in enumerate(up_rows):
                s = nu_tot + nc + slack_of[b]
                y0[s] = max(y0[s], viol_rows[nc + len(low_rows) + i])
            ws = self._working
            if ws is not None and ws[0] != C.shape:
                ws = None
            res = self.qp.solve(H, g, C=C, d=dvec, lb=lb, ub=ub, y0=y0,
                                working_rows=ws[1] if ws else None,
                                working_bounds=ws[2] if ws else None)
            if res.status != OPTIMAL:
                raise NumericalFailure(f"QP subproblem returned {res.status}")
            slack = res.y[nu_tot:]
            slack_sum = float(slack.sum())
            if slack_sum > cfg.feas_tol and rho < cfg.penalty_max:
                rho = min(rho * 10.0, cfg.penalty_max)
                continue
            break
        self._working = (C.shape, res.working_rows, res.working_bounds)
        dz = T @ res.y[:nu_tot] + zc
        lam_qp = res.lam[:nc].copy()
        if viol > cfg.feas_tol:
            # Multipliers are not unique at degenerate vertices, so only let
            # them drive the penalty when the iterate actually needs it.
            lam_max = np.max(np.abs(res.lam), initial=0.0)
            rho = min(max(rho, 2.0 * lam_max + 1.0), cfg.penalty_max)
        return res, dz, slack_sum, lam_qp, rho


def solve_ocp(spec, config=None, warm_start=None):
    """Solve one :class:`OcpSpec` with a fresh :class:`SqpSolver`."""
    return SqpSolver(config).solve(spec, warm_start)


def kkt_residual(spec, candidate, active_tol=1e-5):
    """Scaled first-order optimality measure for ``candidate``, independent of the solve path.

    ``candidate`` is an :class:`OcpSolution` or a ``(states, inputs)`` pair.
    Multipliers are re-estimated by bounded least squares over the
    equality constraints and the nearly-active inequalities. The result is
    the max of the scaled stationarity error, the absolute constraint
    violation, and the scaled complementarity error.
    """
    states, inputs = ((candidate.states, candidate.inputs)
                      if hasattr(candidate, "states") else candidate)
    X = np.asarray(states, dtype=float).reshape(spec.N + 1, spec.n)
    U = np.asarray(inputs, dtype=float).reshape(spec.N, spec.m)
    z = spec.pack(X, U)
    n, m, N, nz = spec.n, spec.m, spec.N, spec.nz
    grad = spec.objective_gradient(z)
    gscale = max(1.0, np.max(np.abs(grad)))

    eq_rows = [np.eye(n, nz)]
    for k in range(N):
        A, B = spec.model.jacobians(X[k], U[k])
        J = np.zeros((n, nz))
        J[:, spec.state_slice(k + 1)] = np.eye(n)
        J[:, spec.state_slice(k)] -= A
        J[:, spec.input_slice(k)] -= B
        eq_rows.append(J)
    J_eq = np.vstack(eq_rows)

    ineq_grads, ineq_vals = [], []
    for c in spec.constraints:
        row = np.zeros(nz)
        row[spec.constraint_index(c)] = c.gradient(X[c.k], X[c.k + 1], U[c.k])
        ineq_grads.append(row)
        ineq_vals.append(c.value(X[c.k], X[c.k + 1], U[c.k]))
    for k in range(1, N + 1):
        lo = spec.xf_lb if k == N else spec.x_lb
        hi = spec.xf_ub if k == N else spec.x_ub
        for i in range(n):
            col = k * n + i
            if np.isfinite(lo[i]):
                ineq_grads.append(np.eye(1, nz, col)[0])
                ineq_vals.append(X[k, i] - lo[i])
            if np.isfinite(hi[i]):
                ineq_grads.append(-np.eye(1, nz, col)[0])
                ineq_vals.append(hi[i] - X[k, i])
    for k in range(N):
        for i in range(m):
            col = (N + 1) * n + k * m + i
            if np.isfinite(spec.u_lb[i]):
                ineq_grads.append(np.eye(1, nz, col)[0])
                ineq_vals.append(U[k, i] - spec.u_lb[i])
            if np.isfinite(spec.u_ub[i]):
                ineq_grads.append(-np.eye(1, nz, col)[0])
                ineq_vals.append(spec.u_ub[i] - U[k, i])
    ineq_vals = np.array(ineq_vals)
    J_in = np.array(ineq_grads).reshape(-1, nz)

    active = np.flatnonzero(ineq_vals <= active_tol)
    J_act = J_in[active]
    M = np.vstack([J_eq, J_act]).T
    lo_b = np.concatenate([np.full(J_eq.shape[0], -np.inf), np.zeros(active.size)])
    hi_b = np.full(M.shape[1], np.inf)
    fit = lsq_linear(M, grad, bounds=(lo_b, hi_b), method="bvls", tol=1e-14)
    stationarity = np.max(np.abs(grad - M @ fit.x)) / gscale
    lam_act = fit.x[J_eq.shape[0]:]
    complementarity = (np.max(np.abs(lam_act * ineq_vals[active])) / gscale
                       if active.size else 0.0)
    feasibility = spec.max_violation(z)
    return float(max(stationarity, feasibility, complementarity))
