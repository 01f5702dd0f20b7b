"""MPC-CBF, MPC-DC and DCLF-DCBF controllers and the receding-horizon driver.

Barrier entries in the configs are either a barrier object (``value``,
``gradient``, ``hessian``) or a callable ``k -> barrier`` giving a
time-varying barrier along the horizon (e.g. a moving opponent).
"""
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DiscreteModel
from .nlp import (SOLVED, CbfStageConstraint, OcpSpec, SolverConfig, SqpSolver,
                  StageConstraint, StateConstraint, shift_solution)

REACHED_GOAL = "reached_goal"
TIME_LIMIT = "time_limit"
SOLVER_INFEASIBLE = "solver_infeasible"


def _at_step(barrier, k):
    return barrier if hasattr(barrier, "value") else barrier(k)


def _check_rate(name, value):
    if not 0 < value <= 1:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


@dataclass
class MpcCbfConfig:
    """MPC with the discrete CBF decrease condition at every horizon step."""

    model: DiscreteModel
    N: int
    gamma: float
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
    barriers: list = field(default_factory=list)

    def __post_init__(self):
        _check_rate("gamma", self.gamma)
        if int(self.N) < 1:
            raise ValueError(f"horizon N must be >= 1, got {self.N}")


@dataclass
class MpcDcConfig:
    """MPC with distance constraints ``g(x_k) >= 0`` for ``k = 0..N-1``."""

    model: DiscreteModel
    N: int
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
    distance_constraints: list = field(default_factory=list)

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError(f"horizon N must be >= 1, got {self.N}")


@dataclass
class DclfDcbfConfig:
    """One-step CLF/CBF program over ``(u, delta)``.

    ``V(x) = (x - x_goal)' P (x - x_goal)``; cost ``u'Hu + l delta^2``.
    """

    model: DiscreteModel
    H: np.ndarray
    P: np.ndarray
    l: float = 1e3
    alpha: float = 0.1
    gamma: float = 0.4
    barriers: list = field(default_factory=list)
    u_lb: np.ndarray = None
    u_ub: np.ndarray = None
    x_goal: np.ndarray = None

    def __post_init__(self):
        _check_rate("alpha", self.alpha)
        _check_rate("gamma", self.gamma)
        if not self.l > 0:
            raise ValueError(f"slack weight l must be positive, got {self.l}")
        self.H = np.asarray(self.H, dtype=float)
        if np.min(np.linalg.eigvalsh(0.5 * (self.H + self.H.T))) <= 0:
            raise ValueError("H must be positive definite")


def _spec_kwargs(config, x_t, constraints):
    return dict(model=config.model, N=config.N, x0=x_t, Q=config.Q, R=config.R, P=config.P,
                x_lb=config.x_lb, x_ub=config.x_ub, u_lb=config.u_lb, u_ub=config.u_ub,
                xf_lb=config.xf_lb, xf_ub=config.xf_ub, x_ref=config.x_ref,
                u_ref=config.u_ref, constraints=constraints)


def build_mpc_cbf(config, x_t):
    """OCP with ``h(x_{k+1}) - (1-gamma) h(x_k) >= 0`` per barrier for ``k = 0..N-1``."""
    cons = [CbfStageConstraint(k, config.gamma, _at_step(b, k), _at_step(b, k + 1))
            for b in config.barriers for k in range(config.N)]
    return OcpSpec(**_spec_kwargs(config, x_t, cons))


def build_mpc_dc(config, x_t):
    """OCP with ``g(x_k) >= 0`` per distance function for ``k = 0..N-1``."""
    cons = [StateConstraint(k, _at_step(g, k))
            for g in config.distance_constraints for k in range(config.N)]
    return OcpSpec(**_spec_kwargs(config, x_t, cons))


class _SlackInputModel(DiscreteModel):
    """Wraps a model so its input carries a trailing slack that does not touch the state."""

    def __init__(self, base):
        self.base = base
        self.n_states = base.n_states
        self.n_inputs = base.n_inputs + 1

    def step(self, x, u):
        return self.base.step(x, u[:-1])

    def jacobians(self, x, u, eps=1e-6):
        A, B = self.base.jacobians(x, u[:-1])
        return A, np.hstack([B, np.zeros((self.n_states, 1))])


class ClfDecreaseConstraint(StageConstraint):
    """``delta - V(x+) + (1 - alpha) V(x) >= 0`` with ``delta`` the last input entry."""

    def __init__(self, P, alpha, x_goal):
        self.k = 0
        self.P = np.asarray(P, dtype=float)
        self.alpha = float(alpha)
        self.x_goal = np.asarray(x_goal, dtype=float)

    def _V(self, x):
        e = x - self.x_goal
        return float(e @ self.P @ e)

    def value(self, x, xn, u):
        return u[-1] - self._V(xn) + (1.0 - self.alpha) * self._V(x)

    def gradient(self, x, xn, u):
        Ps = self.P + self.P.T
        gu = np.zeros(len(u))
        gu[-1] = 1.0
        return np.concatenate([(1.0 - self.alpha) * Ps @ (x - self.x_goal),
                               -Ps @ (xn - self.x_goal), gu])

    def hessian(self, x, xn, u):
        n, m = len(x), len(u)
        Ps = self.P + self.P.T
        H = np.zeros((2 * n + m, 2 * n + m))
        H[:n, :n] = (1.0 - self.alpha) * Ps
        H[n:2 * n, n:2 * n] = -Ps
        return H


def build_dclf_dcbf(config, x_k):
    """The one-step DCLF-DCBF program as an ``N = 1`` OCP over the input ``(u, delta)``."""
    base = config.model
    n, m = base.n_states, base.n_inputs
    model = _SlackInputModel(base)
    x_goal = np.zeros(n) if config.x_goal is None else config.x_goal
    R = np.zeros((m + 1, m + 1))
    R[:m, :m] = config.H
    R[m, m] = config.l
    u_lb = np.full(m, -np.inf) if config.u_lb is None else np.asarray(config.u_lb, float)
    u_ub = np.full(m, np.inf) if config.u_ub is None else np.asarray(config.u_ub, float)
    cons = [ClfDecreaseConstraint(config.P, config.alpha, x_goal)]
    cons += [CbfStageConstraint(0, config.gamma, _at_step(b, 0), _at_step(b, 1))
             for b in config.barriers]
    return OcpSpec(model=model, N=1, x0=x_k, Q=np.zeros((n, n)), R=R, P=np.zeros((n, n)),
                   u_lb=np.append(u_lb, 0.0), u_ub=np.append(u_ub, np.inf), constraints=cons)


class Controller:
    """Receding-horizon controller: rebuilds its OCP at each measured state.

    Keeps the previous solution to warm start the next call, so one instance
    serves one closed-loop run at a time.
    """

    n_controls = None

    def __init__(self, config, solver_config=None):
        self.config = config
        self.solver = SqpSolver(solver_config or SolverConfig())
        self._prev = None

    def build(self, x):
        raise NotImplementedError

    def reset(self):
        self._prev = None
        self.solver = SqpSolver(self.solver.config)

    def solve(self, x):
        """Solve at state ``x``; returns ``(u_first, OcpSolution)``."""
        spec = self.build(np.asarray(x, dtype=float))
        warm = shift_solution(self._prev) if self._prev is not None else None
        sol = self.solver.solve(spec, warm)
        self._prev = sol if sol.status == SOLVED else None
        m = self.n_controls or spec.m
        return sol.inputs[0, :m].copy(), sol


class MpcCbfController(Controller):
    def build(self, x):
        return build_mpc_cbf(self.config, x)


class MpcDcController(Controller):
    def build(self, x):
        return build_mpc_dc(self.config, x)


class DclfDcbfController(Controller):
    def __init__(self, config, solver_config=None):
        super().__init__(config, solver_config)
        self.n_controls = config.model.n_inputs

    def build(self, x):
        return build_dclf_dcbf(self.config, x)


def solve_dclf_dcbf(config, x_k, solver_config=None):
    """Solve the DCLF-DCBF program at ``x_k``; returns ``(u, delta, OcpSolution)``."""
    sol = SqpSolver(solver_config).solve(build_dclf_dcbf(config, x_k))
    m = config.model.n_inputs
    return sol.inputs[0, :m].copy(), float(sol.inputs[0, m]), sol


@dataclass
class StepStats:
    status: str
    iterations: int
    solve_time: float
    objective: float
    kkt_residual: float


@dataclass
class ClosedLoopResult:
    """``states`` has one more row than ``inputs``; ``h`` has one column per barrier."""

    states: np.ndarray
    inputs: np.ndarray
    h: np.ndarray
    stats: list
    termination: str
    reached_goal: bool
    failure_step: int = None
    solutions: list = None

    @property
    def solve_times(self):
        return np.array([s.solve_time for s in self.stats])


def run_closed_loop(controller, plant, x0, goal, max_steps=100, goal_tol=0.1,
                    barriers=(), stop_at_goal=True, position_dims=(0, 1),
                    keep_solutions=False):
    """Apply the first optimal input at each step and advance ``plant``.

    Terminates on goal proximity (position distance ``<= goal_tol``, only when
    ``stop_at_goal``), after ``max_steps`` inputs, or when a solve does not
    return ``solved``. ``barriers`` are only evaluated for the record.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    pos = list(position_dims)
    goal = np.asarray(goal, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    states, inputs, stats, sols = [x], [], [], []
    reached = False
    termination = TIME_LIMIT
    failure_step = None

    def at_goal(x):
        return float(np.linalg.norm(x[pos] - goal[pos])) <= goal_tol

    controller.reset()
    for t in range(max_steps):
        if at_goal(x):
            reached = True
            if stop_at_goal:
                termination = REACHED_GOAL
                break
        u, sol = controller.solve(x)
        stats.append(StepStats(sol.status, sol.iterations, sol.wall_time, sol.objective,
                               sol.kkt_residual))
        if keep_solutions:
            sols.append(sol)
        if sol.status != SOLVED:
            termination = SOLVER_INFEASIBLE
            failure_step = t
            break
        x = plant.step(x, u)
        states.append(x)
        inputs.append(u)
    else:
        if at_goal(x):
            reached = True
            if stop_at_goal:
                termination = REACHED_GOAL

    S = np.array(states)
    U = np.array(inputs).reshape(-1, plant.n_inputs)
    H = np.array([[b.value(s) for b in barriers] for s in S]).reshape(len(S), len(barriers))
    return ClosedLoopResult(S, U, H, stats, termination, reached, failure_step,
                            sols if keep_solutions else None)
