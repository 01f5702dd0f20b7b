import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from safempc.barriers import CbfCondition, cbf_constraint_residual
from safempc.controllers import run_closed_loop
from safempc.nlp import SOLVED
from safempc.scenarios import IntegratorScenario

SC = IntegratorScenario()
coord = st.floats(-4.8, 4.8, allow_nan=False)
speed = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(px=coord, py=coord, vx=speed, vy=speed, gamma=st.floats(0.05, 1.0),
       N=st.integers(1, 6))
def test_mpc_cbf_keeps_safe(px, py, vx, vy, gamma, N):
    x0 = np.array([px, py, vx, vy])
    assume(SC.cbf.value(x0) >= 0)
    ctl = SC.controller("mpc_cbf", N, gamma)
    res = run_closed_loop(ctl, SC.model, x0, SC.goal, max_steps=12, barriers=[SC.cbf],
                          keep_solutions=True)
    assert res.h.min() >= -1e-6
    for sol in res.solutions:
        if sol.status != SOLVED:
            continue
        h = np.array([SC.cbf.value(s) for s in sol.states])
        assert np.min(h[1:] - (1 - gamma) * h[:-1]) >= -1e-6


@given(gamma=st.floats(1e-3, 1.0), h_curr=st.floats(0, 1e3), h_next=st.floats(-1e3, 1e3))
def test_residual_implies_invariance(gamma, h_curr, h_next):
    if cbf_constraint_residual(CbfCondition(gamma), h_curr, h_next) >= 0:
        assert h_next >= 0
