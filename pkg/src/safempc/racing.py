"""Curvilinear track geometry, opponents, model identification and the racing scenario.

The ego car is integrated with the nonlinear lateral model at ``sim_rate``.
Its MPC-CBF controller runs at ``ctrl_rate`` on a linear model identified
from a PID-driven lap. Opponents hold constant speed and lateral offset.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .barriers import RectangularCarCbf, wrap_signed
from .controllers import MpcCbfConfig, MpcCbfController
from .dynamics import (E_Y, S, VX, PidGains, VehicleParams, fit_linear_model,
                       pid_tracking_control)
from .errors import SingularStateError
from .nlp import SOLVED

log = logging.getLogger(__name__)


class Track:
    """Closed centerline built from ``("straight", length)`` and ``("arc", radius, angle)`` pieces.

    Positive arc angles turn left (positive curvature). The start pose is
    ``origin = (x, y, heading)``.
    """

    def __init__(self, segments, half_width, origin=(0.0, 0.0, 0.0), closure_tol=1e-9):
        if not half_width > 0:
            raise ValueError("half_width must be positive")
        self.segments = [tuple(seg) for seg in segments]
        self.half_width = float(half_width)
        self.origin = tuple(float(v) for v in origin)
        lengths, kappas = [], []
        for seg in self.segments:
            if seg[0] == "straight":
                if not seg[1] > 0:
                    raise ValueError("straight length must be positive")
                lengths.append(float(seg[1]))
                kappas.append(0.0)
            elif seg[0] == "arc":
                radius, angle = float(seg[1]), float(seg[2])
                if not (radius > 0 and angle != 0):
                    raise ValueError("arc needs a positive radius and nonzero angle")
                lengths.append(radius * abs(angle))
                kappas.append(math.copysign(1.0 / radius, angle))
            else:
                raise ValueError(f"unknown segment kind {seg[0]!r}")
        self.lengths = np.array(lengths)
        self.kappas = np.array(kappas)
        self.ends = np.cumsum(self.lengths)
        self.starts = self.ends - self.lengths
        self.length = float(self.ends[-1])
        # pose at the start of each segment
        self._poses = [self.origin]
        for L, k in zip(self.lengths, self.kappas):
            self._poses.append(self._advance(self._poses[-1], L, k))
        end = self._poses[-1]
        gap = math.hypot(end[0] - self.origin[0], end[1] - self.origin[1])
        dheading = math.remainder(end[2] - self.origin[2], 2 * math.pi)
        if gap > closure_tol or abs(dheading) > closure_tol:
            raise ValueError(f"track does not close: gap {gap:.3g} m, heading {dheading:.3g} rad")

    @staticmethod
    def _advance(pose, d, kappa):
        x, y, th = pose
        if kappa == 0.0:
            return x + d * math.cos(th), y + d * math.sin(th), th
        th1 = th + kappa * d
        return (x + (math.sin(th1) - math.sin(th)) / kappa,
                y - (math.cos(th1) - math.cos(th)) / kappa, th1)

    def segment_at(self, s):
        return kernels.segment_index(self.ends, self.length, float(s))

    def curvature_at(self, s):
        return float(self.kappas[self.segment_at(s)])

    def curvilinear_to_global(self, s, e_y):
        """Centerline pose at ``s`` shifted by ``e_y`` along the left normal: ``(x, y, heading)``."""
        i = self.segment_at(s)
        d = float(s) % self.length - self.starts[i]
        x, y, th = self._advance(self._poses[i], d, float(self.kappas[i]))
        return x - e_y * math.sin(th), y + e_y * math.cos(th), th


def default_track():
    """Two 4 m straights joined by two left-hand half circles of radius 1 m."""
    return Track([("straight", 4.0), ("arc", 1.0, math.pi), ("straight", 4.0),
                  ("arc", 1.0, math.pi)], half_width=0.4)


@dataclass(frozen=True)
class OpponentCar:
    speed: float
    e_y: float
    s0: float
    l1: float = 0.2
    l2: float = 0.1

    def s_at(self, t):
        """Unwrapped arc length at time ``t``."""
        return self.s0 + self.speed * t

    def check(self, track):
        if abs(self.e_y) > track.half_width:
            raise ValueError(f"opponent e_y={self.e_y} outside half-width {track.half_width}")


@dataclass
class RacingCost:
    """Tracking cost on ``[vx, vy, phi, e_phi, s, e_y]`` toward speed ``v_t`` on the centerline."""

    v_t: float = 0.6
    Q: np.ndarray = field(default_factory=lambda: np.diag([10.0, 0, 0, 0, 0, 10.0]))
    R: np.ndarray = field(default_factory=lambda: np.eye(2))

    @property
    def x_ref(self):
        return np.array([self.v_t, 0, 0, 0, 0, 0], dtype=float)


def _track_arrays(track):
    return np.ascontiguousarray(track.ends), np.ascontiguousarray(track.kappas)


def _integrate(params, track, x, u, dt, nsteps):
    traj, status, n_done = kernels.vehicle_integrate(
        params.as_array(), np.asarray(x, dtype=float), float(u[0]), float(u[1]),
        *_track_arrays(track), track.length, dt, nsteps)
    traj = np.asarray(traj)
    if status != kernels.OK:
        last = traj[-1] if n_done else x
        raise SingularStateError(f"vehicle model singular after {n_done} substeps at state {last}")
    return traj


@dataclass
class PidLap:
    """Controller-rate samples of a PID-driven run: states ``(T+1, 6)``, inputs ``(T, 2)``."""

    states: np.ndarray
    inputs: np.ndarray
    dt: float


def simulate_pid_lap(track, params=None, gains=None, x0=None, ctrl_rate=10, sim_rate=1000,
                     laps=1.0, v_mean=0.5, v_amp=0.2, v_period=6.0, ey_amp=0.2,
                     ey_period=5.0, dither=(0.2, 0.05), seed=0, u_lb=(-1.0, -0.5),
                     u_ub=(1.0, 0.5)):
    """Drive ``laps`` laps with the PID tracker plus seeded input dither.

    The speed target follows ``v_mean + v_amp sin(2 pi t / v_period)`` and the
    tracked lateral offset ``ey_amp sin(2 pi t / ey_period)``, so the data
    covers the lane changes the racing controller makes. The dither (std of
    ``a`` and ``delta``) keeps the regression identifiable, since PID inputs
    alone are linear in the state.
    """
    params = params or VehicleParams()
    gains = gains or PidGains()
    nsub = _substeps(ctrl_rate, sim_rate)
    dt_sim = 1.0 / sim_rate
    rng = np.random.default_rng(seed)
    x = np.array([0.2, 0, 0, 0, 0, 0], dtype=float) if x0 is None else np.asarray(x0, float)
    s_end = x[S] + laps * track.length
    X, U = [x.copy()], []
    t = 0.0
    while x[S] < s_end:
        v_d = v_mean + v_amp * math.sin(2 * math.pi * t / v_period)
        shifted = x.copy()
        shifted[E_Y] -= ey_amp * math.sin(2 * math.pi * t / ey_period)
        u = pid_tracking_control(gains, shifted, v_d) + rng.normal(0.0, dither)
        u = np.clip(u, u_lb, u_ub)
        x = _integrate(params, track, x, u, dt_sim, nsub)[-1]
        X.append(x.copy())
        U.append(u)
        t += 1.0 / ctrl_rate
    return PidLap(np.array(X), np.array(U), 1.0 / ctrl_rate)


def identify_racing_model(track, params=None, seed=0, **lap_kwargs):
    """Fit the controller's linear model on one PID lap (arc length pinned as an integrator).

    Returns ``(model, lap)``.
    """
    lap = simulate_pid_lap(track, params, seed=seed, **lap_kwargs)
    return fit_linear_model(lap.states, lap.inputs, fixed_dims=[S]), lap


def _substeps(ctrl_rate, sim_rate):
    ratio = sim_rate / ctrl_rate
    if ctrl_rate <= 0 or sim_rate <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("sim_rate must be a positive integer multiple of ctrl_rate")
    return int(round(ratio))


@dataclass
class RacingControllerConfig:
    """MPC-CBF settings for the ego car."""

    N: int = 12
    gamma: float = 0.3
    cost: RacingCost = field(default_factory=RacingCost)
    u_lb: tuple = (-1.0, -0.5)
    u_ub: tuple = (1.0, 0.5)
    shape: RectangularCarCbf = field(default_factory=RectangularCarCbf)
    cbf_margin: float = 0.3


class _ShiftedBarrier:
    """``h - margin`` for a barrier ``h``."""

    def __init__(self, inner, margin):
        self.inner, self.margin = inner, margin

    def value(self, x):
        return self.inner.value(x) - self.margin

    def gradient(self, x):
        return self.inner.gradient(x)

    def hessian(self, x):
        return self.inner.hessian(x)


def make_racing_controller(model, track, config=None, solver_config=None):
    """MPC-CBF on the identified model with ``|e_y| <= half_width - l2`` and ``P = Q``."""
    config = config or RacingControllerConfig()
    bound = track.half_width - config.shape.l2
    x_lb = np.full(6, -np.inf)
    x_ub = np.full(6, np.inf)
    x_lb[E_Y], x_ub[E_Y] = -bound, bound
    cost = config.cost
    mpc = MpcCbfConfig(model=model, N=config.N, gamma=config.gamma, Q=cost.Q, R=cost.R,
                       P=cost.Q, x_lb=x_lb, x_ub=x_ub, u_lb=np.array(config.u_lb),
                       u_ub=np.array(config.u_ub), x_ref=cost.x_ref, barriers=[])
    ctl = MpcCbfController(mpc, solver_config)
    ctl.racing_config = config
    return ctl


def _opponent_provider(shape, opp, t, dt, track_length, margin):
    def at(k):
        bar = shape.against(opp.s_at(t + k * dt), opp.e_y, track_length)
        return _ShiftedBarrier(bar, margin) if margin else bar
    return at


@dataclass
class OvertakeEvent:
    substep: int
    t: float
    opponent: int
    direction: str  # "pass" (ego moves ahead) or "passed"
    side: str  # "left" if ego e_y > opponent e_y at the crossing


@dataclass
class RaceResult:
    """Substep-resolution record of a race.

    ``states`` is ``(K+1, 6)``; ``inputs`` ``(K, 2)`` holds the input applied
    over each substep; ``h`` is ``(K+1, n_opponents)``; ``opp_s`` holds the
    unwrapped opponent arc lengths. ``cbf_residual_min`` is the smallest
    open-loop CBF residual of each solved control step (``inf`` without
    opponents).
    """

    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    h: np.ndarray
    opp_s: np.ndarray
    solve_times: np.ndarray
    solve_status: list
    cbf_residual_min: np.ndarray
    overtakes: list
    track_violation: bool
    termination: str
    failure_step: int = None
    laps_completed: float = 0.0
    substeps_per_control: int = 100

    @property
    def n_passes(self):
        return sum(e.direction == "pass" for e in self.overtakes)

    def final_lap_mean_speed(self, track_length):
        s = self.states[:, S]
        mask = s >= s[-1] - track_length
        return float(np.mean(self.states[mask, VX]))


def detect_overtakes(t, ego_s, ego_ey, opp_s, opp_ey, track_length):
    """Sign changes of the wrapped gap ``s - s_i`` near zero (not at the ``L/2`` wrap)."""
    events = []
    for i in range(opp_s.shape[1]):
        ds = wrap_signed(ego_s - opp_s[:, i], track_length)
        ahead = ds >= 0
        for j in np.flatnonzero(ahead[1:] != ahead[:-1]) + 1:
            if abs(ds[j]) > track_length / 4:
                continue
            direction = "pass" if ahead[j] else "passed"
            side = "left" if ego_ey[j] > opp_ey[i] else "right"
            events.append(OvertakeEvent(int(j), float(t[j]), i, direction, side))
    events.sort(key=lambda e: (e.substep, e.opponent))
    return events


def run_race(track, controller, opponents, laps=2, ctrl_rate=10, sim_rate=1000, params=None,
             x0=None, max_time=None):
    """Race the ego car for ``laps`` laps against constant-speed opponents.

    ``controller`` comes from :func:`make_racing_controller`. Opponent poses
    are known exactly and extrapolated at constant speed over the horizon.
    """
    params = params or VehicleParams()
    for opp in opponents:
        opp.check(track)
    nsub = _substeps(ctrl_rate, sim_rate)
    dt_ctrl, dt_sim = 1.0 / ctrl_rate, 1.0 / sim_rate
    cfg = controller.racing_config
    x = np.array([0.2, 0, 0, 0, 0, 0], dtype=float) if x0 is None else np.asarray(x0, float)
    s_goal = x[S] + laps * track.length
    if max_time is None:
        max_time = 4.0 * laps * track.length / max(cfg.cost.v_t, 1e-3) + 20.0
    max_ctrl = int(math.ceil(max_time * ctrl_rate))

    controller.reset()
    chunks, inputs, times, statuses, residuals = [x[None]], [], [], [], []
    termination, failure_step = "completed", None
    for step in range(max_ctrl):
        if x[S] >= s_goal:
            break
        t = step * dt_ctrl
        controller.config.barriers = [
            _opponent_provider(cfg.shape, o, t, dt_ctrl, track.length, cfg.cbf_margin)
            for o in opponents]
        u, sol = controller.solve(x)
        times.append(sol.wall_time)
        statuses.append(sol.status)
        if sol.status != SOLVED:
            termination, failure_step = "solver_infeasible", step
            log.warning("racing MPC returned %s at control step %d", sol.status, step)
            break
        if opponents:
            spec = controller.build(x)
            residuals.append(float(spec.constraint_values(spec.pack(sol.states, sol.inputs)).min()))
        else:
            residuals.append(math.inf)
        try:
            traj = _integrate(params, track, x, u, dt_sim, nsub)
        except SingularStateError:
            termination, failure_step = "singular_state", step
            break
        chunks.append(traj)
        inputs.append(np.tile(u, (nsub, 1)))
        x = traj[-1]
    else:
        termination = "time_limit" if x[S] < s_goal else "completed"

    states = np.vstack(chunks)
    K = len(states) - 1
    tt = np.arange(K + 1) * dt_sim
    opp_s = np.array([[o.s_at(tk) for o in opponents] for tk in tt]).reshape(K + 1, -1)
    shapes = [RectangularCarCbf(cfg.shape.l1, cfg.shape.l2) for _ in opponents]
    h = np.column_stack([
        shapes[i].h(wrap_signed(states[:, S] - opp_s[:, i], track.length),
                    states[:, E_Y] - o.e_y) for i, o in enumerate(opponents)
    ]) if opponents else np.zeros((K + 1, 0))
    overtakes = detect_overtakes(tt, states[:, S], states[:, E_Y], opp_s,
                                 [o.e_y for o in opponents], track.length)
    return RaceResult(
        t=tt, states=states,
        inputs=np.vstack(inputs) if inputs else np.zeros((0, 2)),
        h=h, opp_s=opp_s, solve_times=np.array(times), solve_status=statuses,
        cbf_residual_min=np.array(residuals),
        overtakes=overtakes,
        track_violation=bool(np.any(np.abs(states[:, E_Y]) > track.half_width)),
        termination=termination, failure_step=failure_step,
        laps_completed=float((states[-1, S] - states[0, S]) / track.length),
        substeps_per_control=nsub)

