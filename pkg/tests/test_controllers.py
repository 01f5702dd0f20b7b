import numpy as np
import pytest
from scipy.optimize import minimize

from safempc.barriers import CircularObstacleCbf
from safempc.controllers import (REACHED_GOAL, SOLVER_INFEASIBLE, DclfDcbfConfig, MpcCbfConfig,
                                 MpcDcConfig, build_dclf_dcbf, build_mpc_cbf, build_mpc_dc,
                                 run_closed_loop, solve_dclf_dcbf)
from safempc.dynamics import DoubleIntegratorModel
from safempc.nlp import SOLVED, CbfStageConstraint, StateConstraint

from conftest import closed_loop

DI = DoubleIntegratorModel(0.2)
OBSTACLE = CircularObstacleCbf(-2.0, -2.25, 1.5)


def common(N):
    return dict(model=DI, N=N, Q=10 * np.eye(4), R=np.eye(2), P=100 * np.eye(4),
                x_lb=-5 * np.ones(4), x_ub=5 * np.ones(4), u_lb=-np.ones(2), u_ub=np.ones(2))


def dclf(**kw):
    d = dict(model=DI, H=np.eye(2), P=100 * np.eye(4), l=1e3, alpha=0.1, gamma=0.4,
             barriers=[OBSTACLE], u_lb=-np.ones(2), u_ub=np.ones(2), x_goal=np.zeros(4))
    d.update(kw)
    return DclfDcbfConfig(**d)


class TestBuilders:
    def test_cbf_one_step(self):
        spec = build_mpc_cbf(MpcCbfConfig(gamma=0.4, barriers=[OBSTACLE], **common(1)),
                             np.array([-5.0, -5, 0, 0]))
        assert len(spec.constraints) == 1
        c = spec.constraints[0]
        assert isinstance(c, CbfStageConstraint) and c.k == 0

    def test_benchmark_integrator_spec(self):
        spec = build_mpc_cbf(MpcCbfConfig(gamma=0.4, barriers=[OBSTACLE], **common(8)),
                             np.array([-5.0, -5, 0, 0]))
        assert len(spec.constraints) == 8
        assert [c.k for c in spec.constraints] == list(range(8))
        np.testing.assert_array_equal(spec.x_ub, 5 * np.ones(4))
        np.testing.assert_array_equal(spec.x_lb, -5 * np.ones(4))
        np.testing.assert_array_equal(spec.u_ub, np.ones(2))
        np.testing.assert_array_equal(spec.xf_ub, spec.x_ub)

    def test_cbf_gamma_one_is_next_state_h(self, rng):
        spec = build_mpc_cbf(MpcCbfConfig(gamma=1.0, barriers=[OBSTACLE], **common(3)),
                             np.zeros(4))
        for _ in range(10):
            x, xn, u = rng.normal(size=4), rng.normal(size=4), rng.normal(size=2)
            for c in spec.constraints:
                assert c.value(x, xn, u) == OBSTACLE.value(xn)

    def test_dc_indexing(self):
        x0 = np.array([-5.0, -5, 0, 0])
        one = build_mpc_dc(MpcDcConfig(distance_constraints=[OBSTACLE], **common(1)), x0)
        assert len(one.constraints) == 1
        c = one.constraints[0]
        assert isinstance(c, StateConstraint) and c.k == 0
        # on the pinned initial state the constraint gradient has no input part
        assert np.all(c.gradient(x0, x0, np.zeros(2))[8:] == 0)
        seven = build_mpc_dc(MpcDcConfig(distance_constraints=[OBSTACLE], **common(7)), x0)
        assert len(seven.constraints) == 7

    def test_shared_cost_structure(self):
        x0 = np.array([-5.0, -5, 0, 0])
        a = build_mpc_cbf(MpcCbfConfig(gamma=0.4, barriers=[OBSTACLE], **common(5)), x0)
        b = build_mpc_dc(MpcDcConfig(distance_constraints=[OBSTACLE], **common(5)), x0)
        for name in ("Q", "R", "P", "x_lb", "x_ub", "u_lb", "u_ub", "x_ref", "u_ref"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_time_varying_barrier(self):
        bars = {k: CircularObstacleCbf(float(k), 0.0, 1.0) for k in range(4)}
        spec = build_mpc_cbf(MpcCbfConfig(gamma=0.5, barriers=[bars.__getitem__], **common(3)),
                             np.zeros(4))
        for c in spec.constraints:
            assert c.h_curr is bars[c.k] and c.h_next is bars[c.k + 1]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MpcCbfConfig(gamma=0.0, **common(3))
        with pytest.raises(ValueError):
            MpcDcConfig(**common(0))
        with pytest.raises(ValueError):
            dclf(l=0.0)
        with pytest.raises(ValueError):
            dclf(H=np.zeros((2, 2)))


class TestDclfDcbf:
    def test_descent_achievable_needs_no_slack(self):
        x = np.array([1.0, 0.0, -1.0, 0.0])
        u, delta, sol = solve_dclf_dcbf(dclf(), x)
        assert sol.status == SOLVED
        assert delta == pytest.approx(0.0, abs=1e-9)
        V = lambda y: 100 * y @ y
        assert V(DI.step(x, u)) <= 0.9 * V(x) + 1e-9

    def test_conflict_relaxes_clf_keeps_cbf(self):
        x = np.array([-3.51, -2.25, 0.1, 0.0])
        u, delta, sol = solve_dclf_dcbf(dclf(), x)
        _, delta_free, _ = solve_dclf_dcbf(dclf(barriers=[]), x)
        assert sol.status == SOLVED
        assert delta > delta_free + 1.0
        residual = OBSTACLE.value(DI.step(x, u)) - 0.6 * OBSTACLE.value(x)
        assert residual >= -1e-8

    def test_unbounded_matches_independent_solver(self, rng):
        # without bounds or obstacle the optimal slack is max(0, V(x+) - 0.9 V(x)),
        # which leaves a C1 problem in u alone
        A, B = DI.A, DI.B
        for _ in range(4):
            x = rng.uniform(-3, 3, 4)
            u, delta, sol = solve_dclf_dcbf(dclf(barriers=[], u_lb=None, u_ub=None), x)
            V0 = 100 * x @ x

            def reduced(v):
                xn = A @ x + B @ v
                gap = max(0.0, 100 * xn @ xn - 0.9 * V0)
                return v @ v + 1e3 * gap**2, 2 * v + 2e3 * gap * 200 * B.T @ xn

            # strictly convex, so every start must reach the same point
            runs = [minimize(reduced, s0, jac=True, method="BFGS", options={"gtol": 1e-11})
                    for s0 in [np.zeros(2), *rng.normal(size=(3, 2))]]
            best = min(runs, key=lambda r: r.fun)
            assert sol.objective == pytest.approx(best.fun, rel=1e-7, abs=1e-9)
            np.testing.assert_allclose(u, best.x, atol=1e-5)

    def test_spec_shape(self):
        spec = build_dclf_dcbf(dclf(), np.array([-5.0, -5, 0, 0]))
        assert spec.N == 1 and spec.m == 3
        assert spec.u_lb[-1] == 0.0 and spec.u_ub[-1] == np.inf
        assert len(spec.constraints) == 2

    def test_infeasible_reported(self):
        x = np.array([-3.6, -2.25, 1.0, 0.0])
        _, _, sol = solve_dclf_dcbf(dclf(), x)
        assert sol.status != SOLVED


class TestClosedLoop:
    def test_start_at_goal(self, scenario):
        ctl = scenario.mpc_cbf(5, 0.3)
        res = run_closed_loop(ctl, scenario.model, scenario.goal, scenario.goal)
        assert res.termination == REACHED_GOAL and res.reached_goal
        assert res.inputs.shape == (0, 2) and len(res.states) == 1

    def test_max_steps_validated(self, scenario):
        with pytest.raises(ValueError):
            run_closed_loop(scenario.mpc_cbf(5, 0.3), scenario.model, scenario.x0, scenario.goal,
                            max_steps=0)

    def test_dc5_infeasible_near_boundary(self, scenario):
        res = closed_loop(scenario, "mpc_dc", 5)
        assert res.termination == SOLVER_INFEASIBLE
        assert res.failure_step is not None and res.failure_step == len(res.inputs)
        # the obstacle lies within one horizon of travel when the solve fails
        x = res.states[-1]
        assert 0 < scenario.cbf.clearance(x) < np.linalg.norm(x[2:]) * 5 * scenario.dt

    def test_plant_consistency(self, integrator_runs, scenario):
        for res in integrator_runs.values():
            for x, u, xn in zip(res.states[:-1], res.inputs, res.states[1:]):
                np.testing.assert_array_equal(scenario.model.step(x, u), xn)

    def test_lengths_consistent(self, integrator_runs):
        for res in integrator_runs.values():
            assert len(res.states) == len(res.inputs) + 1
            assert res.h.shape == (len(res.states), 1)
            assert len(res.stats) >= len(res.inputs)

    def test_safety_and_open_loop_decrease(self, integrator_runs, scenario):
        for key in ("cbf_N8_g0.4", "cbf_N1_g0.4", "cbf_N8_g1"):
            res = integrator_runs[key]
            gamma = float(key.split("_g")[1])
            assert res.h.min() >= -1e-6
            for sol in res.solutions:
                if sol.status != SOLVED:
                    continue
                h = np.array([scenario.cbf.value(s) for s in sol.states])
                assert np.min(h[1:] - (1 - gamma) * h[:-1]) >= -1e-6

    def test_warm_start_reduces_iterations(self, integrator_runs):
        its = [s.iterations for s in integrator_runs["cbf_N8_g0.4"].stats]
        assert np.mean(its[1:]) < its[0]

    def test_gamma_one_residual_identity(self, rng):
        x0 = np.array([-5.0, -5, 0, 0])
        cbf = build_mpc_cbf(MpcCbfConfig(gamma=1.0, barriers=[OBSTACLE], **common(6)), x0)
        dc = build_mpc_dc(MpcDcConfig(distance_constraints=[OBSTACLE], **common(6)), x0)
        for _ in range(20):
            X = rng.uniform(-5, 5, (7, 4))
            U = rng.uniform(-1, 1, (6, 2))
            r_cbf = cbf.constraint_values(cbf.pack(X, U))
            r_dc = dc.constraint_values(dc.pack(X, U))
            # CBF row k constrains x_{k+1}; DC row k+1 constrains the same state
            assert np.max(np.abs(r_cbf[:-1] - r_dc[1:])) <= 1e-12
