"""Double-integrator obstacle-avoidance scenario and controller factories."""
from dataclasses import dataclass, field

import numpy as np

from .barriers import CircularObstacleCbf
from .controllers import (DclfDcbfConfig, DclfDcbfController, MpcCbfConfig, MpcCbfController,
                          MpcDcConfig, MpcDcController)
from .dynamics import DoubleIntegratorModel


@dataclass
class IntegratorScenario:
    """Start, goal, weights, boxes and obstacle of the double-integrator benchmark."""

    dt: float = 0.2
    x0: np.ndarray = field(default_factory=lambda: np.array([-5.0, -5.0, 0.0, 0.0]))
    goal: np.ndarray = field(default_factory=lambda: np.zeros(4))
    q: float = 10.0
    r: float = 1.0
    p: float = 100.0
    x_max: float = 5.0
    u_max: float = 1.0
    obstacle: tuple = (-2.0, -2.25, 1.5)
    clf_slack_weight: float = 1e3
    clf_rate: float = 0.1

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        self.model = DoubleIntegratorModel(self.dt)
        self.cbf = CircularObstacleCbf(*self.obstacle)

    def _common(self, N):
        n, m = 4, 2
        return dict(model=self.model, N=N, Q=self.q * np.eye(n), R=self.r * np.eye(m),
                    P=self.p * np.eye(n), x_lb=-self.x_max * np.ones(n),
                    x_ub=self.x_max * np.ones(n), u_lb=-self.u_max * np.ones(m),
                    u_ub=self.u_max * np.ones(m), x_ref=self.goal)

    def mpc_cbf(self, N, gamma, solver_config=None):
        cfg = MpcCbfConfig(gamma=gamma, barriers=[self.cbf], **self._common(N))
        return MpcCbfController(cfg, solver_config)

    def mpc_dc(self, N, solver_config=None):
        cfg = MpcDcConfig(distance_constraints=[self.cbf], **self._common(N))
        return MpcDcController(cfg, solver_config)

    def dclf_dcbf(self, gamma, solver_config=None):
        m = 2
        cfg = DclfDcbfConfig(model=self.model, H=self.r * np.eye(m), P=self.p * np.eye(4),
                             l=self.clf_slack_weight, alpha=self.clf_rate, gamma=gamma,
                             barriers=[self.cbf], u_lb=-self.u_max * np.ones(m),
                             u_ub=self.u_max * np.ones(m), x_goal=self.goal)
        return DclfDcbfController(cfg, solver_config)

    def controller(self, kind, N=None, gamma=None, solver_config=None):
        """Factory keyed by ``"mpc_cbf"``, ``"mpc_dc"`` or ``"dclf_dcbf"``."""
        if kind == "mpc_cbf":
            return self.mpc_cbf(N, gamma, solver_config)
        if kind == "mpc_dc":
            return self.mpc_dc(N, solver_config)
        if kind == "dclf_dcbf":
            return self.dclf_dcbf(gamma, solver_config)
        raise ValueError(f"unknown controller kind {kind!r}")
