import math

import numpy as np
import pytest

from safempc.dynamics import S, VX
from safempc.racing import (OpponentCar, RacingControllerConfig, Track, default_track,
                            detect_overtakes, identify_racing_model, make_racing_controller,
                            run_race, simulate_pid_lap)

TRACK = default_track()


@pytest.fixture(scope="module")
def identified():
    return identify_racing_model(TRACK)


@pytest.fixture(scope="module")
def free_run(identified):
    model, _ = identified
    return run_race(TRACK, make_racing_controller(model, TRACK), [], laps=1, max_time=8.0)


class TestTrack:
    def test_default_length(self):
        assert TRACK.length == pytest.approx(8 + 2 * math.pi, abs=1e-12)

    def test_curvature(self):
        wide = Track([("straight", 4.0), ("arc", 2.0, math.pi), ("straight", 4.0),
                      ("arc", 2.0, math.pi)], half_width=0.4)
        assert wide.curvature_at(2.0) == 0.0
        assert wide.curvature_at(4.0 + math.pi) == pytest.approx(0.5)
        assert wide.curvature_at(wide.length + 0.3) == 0.0

    def test_curvature_wraps(self):
        assert TRACK.curvature_at(TRACK.length + 5.0) == TRACK.curvature_at(5.0) == 1.0

    def test_curvilinear_to_global(self):
        np.testing.assert_allclose(TRACK.curvilinear_to_global(0.0, 0.0), [0, 0, 0], atol=1e-15)
        x, y, th = TRACK.curvilinear_to_global(2.0, 0.1)
        assert (x, y, th) == pytest.approx((2.0, 0.1, 0.0))
        # a quarter of the first arc (center (4, 1), radius 1)
        np.testing.assert_allclose(TRACK.curvilinear_to_global(4 + math.pi / 2, 0.0),
                                   [5.0, 1.0, math.pi / 2], atol=1e-12)
        # left of the centerline on a left turn is toward the arc center
        x, y, _ = TRACK.curvilinear_to_global(4 + math.pi / 2, 0.2)
        assert (x, y) == pytest.approx((4.8, 1.0))

    def test_open_track_rejected(self):
        with pytest.raises(ValueError, match="does not close"):
            Track([("straight", 4.0), ("arc", 1.0, math.pi), ("straight", 3.0),
                   ("arc", 1.0, math.pi)], half_width=0.4)

    def test_bad_segments(self):
        with pytest.raises(ValueError):
            Track([("spiral", 1.0)], half_width=0.4)
        with pytest.raises(ValueError):
            Track([("straight", 1.0)], half_width=0.0)


class TestOpponents:
    def test_constant_speed(self):
        o = OpponentCar(0.2, 0.1, 5.5)
        assert o.s_at(0.0) == 5.5
        assert o.s_at(10.0) == pytest.approx(7.5)

    def test_offset_checked(self):
        with pytest.raises(ValueError):
            OpponentCar(0.2, 0.5, 0.0).check(TRACK)

    def test_detect_overtakes(self):
        t = np.linspace(0, 10, 101)
        ego_s = 0.5 * t
        opp_s = (2.0 + 0.1 * t)[:, None]
        ego_ey = np.full_like(t, 0.2)
        ev = detect_overtakes(t, ego_s, ego_ey, opp_s, [-0.1], 14.0)
        assert len(ev) == 1
        assert ev[0].direction == "pass" and ev[0].side == "left"
        assert ev[0].t == pytest.approx(5.0)

    def test_wrap_crossing_is_not_overtake(self):
        # the wrapped gap flips sign at L/2 while the cars are 7 m apart
        t = np.linspace(0, 10, 101)
        ev = detect_overtakes(t, 0.5 * t, np.zeros(101), np.full((101, 1), 10.0), [0.3], 14.0)
        assert ev == []


class TestIdentification:
    def test_holdout_error_bounded(self, identified):
        model, lap = identified
        held = simulate_pid_lap(TRACK, seed=1)
        assert model.rms_residual(held.states, held.inputs) <= 2 * model.fit_residual

    def test_arc_length_integrates_speed(self, identified):
        model, _ = identified
        np.testing.assert_array_equal(model.A[:, S], np.eye(6)[S])
        # ds/dt is close to the speed over one control period
        assert model.A[S, VX] == pytest.approx(0.1, abs=0.02)

    def test_lap_covers_track(self, identified):
        _, lap = identified
        assert lap.states[-1, S] - lap.states[0, S] >= TRACK.length
        assert lap.inputs.std(axis=0).min() > 0


class TestRace:
    def test_rate_must_divide(self, identified):
        ctl = make_racing_controller(identified[0], TRACK)
        with pytest.raises(ValueError):
            run_race(TRACK, ctl, [], ctrl_rate=10, sim_rate=1005, max_time=0.5)

    def test_free_run_tracks_target_speed(self, free_run):
        res = free_run
        assert res.overtakes == [] and res.h.shape[1] == 0
        late = res.states[res.t >= 5.0, VX]
        assert late.size and np.abs(late - 0.6).max() <= 0.05
        assert not res.track_violation
        assert np.all(np.isinf(res.cbf_residual_min))

    def test_parked_far_opponent_changes_nothing(self, identified, free_run):
        model, _ = identified
        parked = OpponentCar(0.0, 0.0, TRACK.length / 2)
        ctl = make_racing_controller(model, TRACK)
        res = run_race(TRACK, ctl, [parked], laps=1, max_time=3.0)
        n = len(res.states)
        np.testing.assert_array_equal(res.states, free_run.states[:n])
        assert res.h.min() > 0

    def test_substep_record_shapes(self, free_run):
        res = free_run
        assert len(res.states) == len(res.inputs) + 1 == len(res.t)
        assert res.substeps_per_control == 100
        # inputs are held over each control period
        assert np.all(res.inputs[:100] == res.inputs[0])

    def test_controller_bounds(self, identified):
        ctl = make_racing_controller(identified[0], TRACK)
        spec = ctl.build(np.array([0.5, 0, 0, 0, 1.0, 0]))
        cfg = RacingControllerConfig()
        assert spec.x_ub[5] == pytest.approx(TRACK.half_width - cfg.shape.l2)
        np.testing.assert_array_equal(spec.P, spec.Q)
        assert spec.N == 12
