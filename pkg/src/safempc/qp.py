"""Dense primal active-set solver for strictly convex quadratic programs.

Solves::

    minimize    1/2 y'Hy + g'y
    subject to  C y >= d,   E y = e,   lb <= y <= ub

Simple bounds are handled by fixing variables, so the equality-constrained
subproblem at each iteration only involves free variables. ``H`` must be
positive definite on the free subspace of every working set encountered;
in practice callers pass a positive definite ``H``.

Multiplier sign convention: at a solution
``H y + g - C' lam - E' nu - z = 0`` with ``lam >= 0`` and ``z`` the signed
bound multipliers (``z_i >= 0`` at a lower bound, ``z_i <= 0`` at an upper).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QpResult:
    y: np.ndarray
    status: str
    iterations: int
    objective: float
    lam: np.ndarray
    nu: np.ndarray
    z: np.ndarray
    working_rows: list = field(default_factory=list)
    working_bounds: dict = field(default_factory=dict)


def _as2d(M, ncols):
    if M is None:
        return np.zeros((0, ncols))
    return np.atleast_2d(np.asarray(M, dtype=float)).reshape(-1, ncols)


class ActiveSetQP:
    """Primal active-set QP solver.

    One instance may be reused across solves; it holds no state between
    calls other than its settings.
    """

    def __init__(self, max_iter=None, feas_tol=1e-9, step_tol=1e-10, mult_tol=1e-10):
        self.max_iter = max_iter
        self.feas_tol = feas_tol
        self.step_tol = step_tol
        self.mult_tol = mult_tol

    def solve(self, H, g, C=None, d=None, E=None, e=None, lb=None, ub=None,
              y0=None, working_rows=None, working_bounds=None):
        H = np.asarray(H, dtype=float)
        g = np.asarray(g, dtype=float)
        n = g.shape[0]
        C = _as2d(C, n)
        d = np.zeros(0) if d is None else np.asarray(d, dtype=float).ravel()
        E = _as2d(E, n)
        e = np.zeros(0) if e is None else np.asarray(e, dtype=float).ravel()
        lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        if np.any(lb > ub):
            return self._infeasible(n, C, E)

        y = None
        if y0 is not None:
            y = np.clip(np.asarray(y0, dtype=float), lb, ub)
            if not self._feasible(y, C, d, E, e):
                y = None
        if y is None:
            y = self._phase_one(n, C, d, E, e, lb, ub, y0)
            if y is None:
                return self._infeasible(n, C, E)

        bounds = self._initial_bounds(y, lb, ub)
        rows = self._initial_rows(y, C, d, E, bounds)

        if working_rows is not None or working_bounds is not None:
            guess = self._try_working_set(H, g, C, d, E, e, lb, ub,
                                          working_rows or [], working_bounds or {}, y)
            if guess is not None:
                y, rows, bounds = guess

        return self._iterate(H, g, C, d, E, e, lb, ub, y, rows, bounds)

    def _feasible(self, y, C, d, E, e):
        tol = self.feas_tol * (1.0 + np.max(np.abs(y), initial=0.0))
        if C.shape[0] and np.min(C @ y - d) < -tol:
            return False
        if E.shape[0] and np.max(np.abs(E @ y - e)) > tol:
            return False
        return True

    def _infeasible(self, n, C, E):
        return QpResult(np.full(n, np.nan), INFEASIBLE, 0, np.nan,
                        np.zeros(C.shape[0]), np.zeros(E.shape[0]), np.zeros(n))

    def _initial_bounds(self, y, lb, ub):
        bounds = {}
        for i in range(y.shape[0]):
            if lb[i] == ub[i]:
                bounds[i] = 0
            elif y[i] <= lb[i]:
                bounds[i] = -1
            elif y[i] >= ub[i]:
                bounds[i] = 1
        return bounds

    def _initial_rows(self, y, C, d, E, bounds):
        if C.shape[0] == 0:
            return []
        free = np.array([i for i in range(y.shape[0]) if i not in bounds], dtype=int)
        if free.size == 0:
            return []
        tol = self.feas_tol * (1.0 + np.max(np.abs(y), initial=0.0))
        rows = []
        basis = E[:, free] if E.shape[0] else np.zeros((0, free.size))
        rank = np.linalg.matrix_rank(basis) if basis.shape[0] else 0
        for j in np.flatnonzero(C @ y - d <= tol):
            trial = np.vstack([basis, C[j, free]])
            r = np.linalg.matrix_rank(trial)
            if r > rank:
                basis, rank = trial, r
                rows.append(int(j))
        return rows

    def _phase_one(self, n, C, d, E, e, lb, ub, y0):
        """Find a feasible point by minimizing elastic violation; ``None`` if there is none."""
        base = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float)
        start = np.clip(base, lb, ub)
        mc, me = C.shape[0], E.shape[0]
        nv = n + mc + 2 * me
        eps = 1e-8
        Hp = np.zeros((nv, nv))
        Hp[:n, :n] = eps * np.eye(n)
        Hp[n:, n:] = eps * np.eye(nv - n)
        gp = np.concatenate([-eps * start, np.ones(nv - n)])
        Cp = np.zeros((mc, nv))
        Cp[:, :n] = C
        Cp[:, n:n + mc] = np.eye(mc)
        Ep = np.zeros((me, nv))
        Ep[:, :n] = E
        Ep[:, n + mc:n + mc + me] = np.eye(me)
        Ep[:, n + mc + me:] = -np.eye(me)
        lbp = np.concatenate([lb, np.zeros(nv - n)])
        ubp = np.concatenate([ub, np.full(nv - n, np.inf)])
        yp = np.zeros(nv)
        yp[:n] = start
        if mc:
            yp[n:n + mc] = np.maximum(0.0, d - C @ start)
        if me:
            r = e - E @ start
            yp[n + mc:n + mc + me] = np.maximum(r, 0.0)
            yp[n + mc + me:] = np.maximum(-r, 0.0)
        res = ActiveSetQP(self.max_iter, self.feas_tol, self.step_tol, self.mult_tol)._iterate(
            Hp, gp, Cp, d, Ep, e, lbp, ubp, yp,
            [], self._initial_bounds(yp, lbp, ubp))
        if res.status != OPTIMAL:
            return None
        y = np.clip(res.y[:n], lb, ub)
        scale = 1.0 + np.max(np.abs(y), initial=0.0)
        if np.sum(res.y[n:]) > 1e-7 * scale:
            return None
        return y

    def _eqp(self, H, grad, C, E, rows, free):
        nf = free.size
        A = np.vstack([E[:, free], C[rows][:, free]]) if (E.shape[0] or rows) else np.zeros((0, nf))
        na = A.shape[0]
        K = np.zeros((nf + na, nf + na))
        K[:nf, :nf] = H[np.ix_(free, free)]
        K[:nf, nf:] = -A.T
        K[nf:, :nf] = A
        rhs = np.zeros(nf + na)
        rhs[:nf] = -grad[free]
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular KKT matrix in QP subproblem") from exc
        if not np.all(np.isfinite(sol)):
            raise NumericalFailure("non-finite QP subproblem solution")
        return sol[:nf], sol[nf:]

    def _try_working_set(self, H, g, C, d, E, e, lb, ub, rows, bounds, y_feas):
        n = g.shape[0]
        bounds = {int(i): s for i, s in bounds.items() if int(i) < n}
        rows = [int(j) for j in rows if int(j) < C.shape[0]]
        y = y_feas.copy()
        for i, s in bounds.items():
            y[i] = lb[i] if s <= 0 else ub[i]
            if not np.isfinite(y[i]):
                return None
        free = np.array([i for i in range(n) if i not in bounds], dtype=int)
        # Solve the EQP from a point satisfying the working set with equality.
        A = np.vstack([E[:, free], C[rows][:, free]]) if (E.shape[0] or rows) else np.zeros((0, free.size))
        if A.shape[0] > free.size or (A.shape[0] and np.linalg.matrix_rank(A) < A.shape[0]):
            return None
        fixed = np.array(sorted(bounds), dtype=int)
        rhs = np.concatenate([e, d[rows]]) if A.shape[0] else np.zeros(0)
        if fixed.size and A.shape[0]:
            Afix = np.vstack([E[:, fixed], C[rows][:, fixed]])
            rhs = rhs - Afix @ y[fixed]
        try:
            if A.shape[0]:
                y[free] = y[free] + np.linalg.lstsq(A, rhs - A @ y[free], rcond=None)[0]
            p, _ = self._eqp(H, H @ y + g, C, E, rows, free)
        except (NumericalFailure, np.linalg.LinAlgError):
            return None
        y[free] += p
        if np.any(y < lb - self.feas_tol) or np.any(y > ub + self.feas_tol):
            return None
        if not self._feasible(y, C, d, E, e):
            return None
        return np.clip(y, lb, ub), rows, bounds

    def _iterate(self, H, g, C, d, E, e, lb, ub, y, rows, bounds):
        n = g.shape[0]
        mc = C.shape[0]
        rows = list(rows)
        bounds = dict(bounds)
        max_iter = self.max_iter or 50 * (n + mc + 10)
        it = 0
        at_minimizer = False
        while True:
            it += 1
            if it > max_iter:
                status = MAX_ITER
                break
            grad = H @ y + g
            free = np.array([i for i in range(n) if i not in bounds], dtype=int)
            p_free, mults = self._eqp(H, grad, C, E, rows, free)
            scale = 1.0 + np.max(np.abs(y), initial=0.0)
            # A full unblocked step or a vertex leaves only roundoff in p.
            vertex = E.shape[0] + len(rows) >= free.size
            if (at_minimizer or vertex
                    or np.max(np.abs(p_free), initial=0.0) <= self.step_tol * scale):
                at_minimizer = False
                ne = E.shape[0]
                lam_w = mults[ne:]
                A_full = np.vstack([E, C[rows]]) if (ne or rows) else np.zeros((0, n))
                zb = grad - A_full.T @ mults
                gscale = 1.0 + np.max(np.abs(grad), initial=0.0)
                tol = self.mult_tol * gscale
                worst, worst_val = None, -tol
                for pos, j in enumerate(rows):
                    if lam_w[pos] < worst_val:
                        worst, worst_val = ("row", pos), lam_w[pos]
                for i, s in bounds.items():
                    if s == 0:
                        continue
                    signed = zb[i] if s < 0 else -zb[i]
                    if signed < worst_val:
                        worst, worst_val = ("bound", i), signed
                if worst is None:
                    status = OPTIMAL
                    break
                if worst[0] == "row":
                    rows.pop(worst[1])
                else:
                    del bounds[worst[1]]
                continue

            p = np.zeros(n)
            p[free] = p_free
            alpha, block = 1.0, None
            if mc:
                inactive = np.array([j for j in range(mc) if j not in set(rows)], dtype=int)
                if inactive.size:
                    Cp = C[inactive] @ p
                    pnorm = np.linalg.norm(p)
                    mask = Cp < -1e-12 * pnorm * np.linalg.norm(C[inactive], axis=1)
                    if np.any(mask):
                        slack = np.maximum(C[inactive[mask]] @ y - d[inactive[mask]], 0.0)
                        ratios = slack / -Cp[mask]
                        k = int(np.argmin(ratios))
                        if ratios[k] < alpha:
                            alpha, block = ratios[k], ("row", int(inactive[mask][k]))
            pf = p[free]
            ptol = 1e-12 * np.max(np.abs(pf))
            down = pf < -ptol
            if np.any(down):
                r = (y[free[down]] - lb[free[down]]) / -pf[down]
                k = int(np.argmin(r))
                if r[k] < alpha:
                    alpha, block = r[k], ("bound", int(free[down][k]), -1)
            up = pf > ptol
            if np.any(up):
                r = (ub[free[up]] - y[free[up]]) / pf[up]
                k = int(np.argmin(r))
                if r[k] < alpha:
                    alpha, block = r[k], ("bound", int(free[up][k]), 1)
            y = y + max(alpha, 0.0) * p
            at_minimizer = block is None
            if block is not None:
                if block[0] == "row":
                    rows.append(block[1])
                else:
                    i, side = block[1], block[2]
                    y[i] = lb[i] if side < 0 else ub[i]
                    bounds[i] = side

        grad = H @ y + g
        lam = np.zeros(mc)
        ne = E.shape[0]
        nu = np.zeros(ne)
        free = np.array([i for i in range(n) if i not in bounds], dtype=int)
        if status == OPTIMAL:
            _, mults = self._eqp(H, grad, C, E, rows, free)
            nu = mults[:ne]
            lam[rows] = mults[ne:]
        z = grad - C.T @ lam - E.T @ nu
        z[free] = 0.0
        obj = float(0.5 * y @ H @ y + g @ y)
        return QpResult(y, status, it, obj, lam, nu, z, rows, bounds)


def solve_qp(H, g, **kwargs):
    """Convenience wrapper around :class:`ActiveSetQP`."""
    solver_kw = {k: kwargs.pop(k) for k in ("max_iter", "feas_tol", "step_tol", "mult_tol")
                 if k in kwargs}
    return ActiveSetQP(**solver_kw).solve(H, g, **kwargs)
