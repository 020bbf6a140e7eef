import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2xtwin.mobility import (
    DegradedUpdateError,
    KalmanBelief,
    KalmanModel,
    KinematicState,
    Measurement,
    Tracker,
    heading_from_velocity,
    horizon_steps,
    initial_belief,
    kf_horizon,
    kf_predict,
    kf_update,
    predict_all,
)


def random_psd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) * scale
    return a @ a.T


class TestHorizon:
    @pytest.mark.parametrize("h,dt,n", [(0.5, 0.1, 5), (1.0, 0.1, 10), (0.0, 0.1, 0), (0.25, 0.1, 3),
                                        (0.24, 0.1, 2), (0.3, 0.1, 3)])
    def test_rounding(self, h, dt, n):
        assert horizon_steps(h, dt) == n

    def test_negative(self):
        with pytest.raises(ValueError):
            horizon_steps(-0.1, 0.1)


class TestHeading:
    def test_from_velocity(self):
        assert heading_from_velocity((0.0, 2.0)) == pytest.approx(math.pi / 2)

    def test_held_when_slow(self):
        assert heading_from_velocity((0.01, 0.0), previous=1.2) == pytest.approx(1.2)

    def test_state_normalizes(self):
        s = KinematicState((0, 0), (1, 0), 3 * math.pi)
        assert s.heading == pytest.approx(math.pi)
        with pytest.raises(ValueError):
            KinematicState((math.nan, 0), (0, 0), 0)


class TestFilter:
    def test_noiseless_cv_exact(self):
        model = KalmanModel(dt=0.1)
        b = KalmanBelief([1.0, -2.0, 3.0, 0.5], np.eye(4), 0.0)
        out = kf_horizon(b, model, 7)
        assert np.allclose(out.mean[:2], [1.0 + 0.7 * 3.0, -2.0 + 0.7 * 0.5], atol=1e-12)
        assert out.t == pytest.approx(0.7)

    def test_horizon_zero_is_identity(self):
        b = KalmanBelief(np.arange(4.0), np.eye(4), 1.0)
        assert kf_horizon(b, KalmanModel(), 0) is b

    def test_horizon_matches_repeated_predict(self, rng):
        model = KalmanModel(dt=0.1, Q=random_psd(rng, 4, 0.1))
        b = KalmanBelief(rng.normal(size=4), random_psd(rng, 4), 0.0)
        step = b
        for _ in range(6):
            step = kf_predict(step, model)
        h = kf_horizon(b, model, 6)
        assert np.allclose(h.mean, step.mean)
        assert np.allclose(h.cov, step.cov)

    def test_scalar_gain_half(self):
        # P = R = 1 on the observed axis gives K = 0.5 and posterior variance 0.5
        model = KalmanModel(dt=0.1, R=np.eye(2))
        b = KalmanBelief([0, 0, 0, 0], np.eye(4), 0.0)
        post = kf_update(b, [2.0, -4.0], model)
        assert post.mean[:2] == pytest.approx([1.0, -2.0], abs=1e-12)
        assert post.cov[0, 0] == pytest.approx(0.5, abs=1e-12)
        assert post.cov[1, 1] == pytest.approx(0.5, abs=1e-12)

    def test_degraded_update(self):
        model = KalmanModel(dt=0.1, R=np.zeros((2, 2)))
        b = KalmanBelief([0, 0, 0, 0], np.zeros((4, 4)), 0.0)
        with pytest.raises(DegradedUpdateError):
            kf_update(b, [1.0, 1.0], model)

    def test_model_validation(self):
        with pytest.raises(ValueError):
            KalmanModel(dt=0.0)
        with pytest.raises(ValueError):
            KalmanModel(Q=-np.eye(4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_update_keeps_psd_and_shrinks(self, seed):
        rng = np.random.default_rng(seed)
        model = KalmanModel(dt=0.1, R=random_psd(rng, 2) + 1e-3 * np.eye(2))
        b = KalmanBelief(rng.normal(size=4), random_psd(rng, 4) + 1e-6 * np.eye(4), 0.0)
        post = kf_update(b, rng.normal(size=2), model)
        assert post.is_valid()
        assert np.trace(post.cov) <= np.trace(b.cov) + 1e-9

    def test_belief_roundtrip(self):
        b = KalmanBelief([1, 2, 3, 4], np.eye(4) * 2, 0.5)
        c = KalmanBelief.from_dict(b.to_dict())
        assert np.array_equal(c.mean, b.mean) and np.array_equal(c.cov, b.cov) and c.t == b.t


class TestTracker:
    def test_tracks_constant_velocity(self):
        tr = Tracker("v", KalmanModel(dt=0.1, Q=np.diag([1e-6, 1e-6, 1e-4, 1e-4])))
        for i in range(60):
            t = 0.1 * i
            tr.ingest(Measurement("v", t, (2.0 * t, 1.0)))
        fc = tr.forecast(0.5)
        assert fc.pose.x == pytest.approx(2.0 * 5.9 + 1.0, abs=0.05)
        assert fc.pose.y == pytest.approx(1.0, abs=0.05)
        assert fc.pose.yaw == pytest.approx(0.0, abs=0.02)

    def test_late_measurement_dropped(self):
        tr = Tracker("v", KalmanModel())
        assert tr.ingest(Measurement("v", 1.0, (0, 0)))
        assert not tr.ingest(Measurement("v", 0.5, (1, 1)))
        assert tr.dropped_late == 1

    def test_forecast_needs_data(self):
        with pytest.raises(ValueError):
            Tracker("v", KalmanModel()).forecast(0.5)

    def test_initial_belief(self):
        m = Measurement("v", 0.0, (3.0, 4.0))
        b = initial_belief(m, KalmanModel())
        assert np.allclose(b.mean, [3, 4, 0, 0])
        assert b.is_valid()

    def test_predict_all_pure(self):
        model = KalmanModel()
        beliefs = {"a": KalmanBelief([0, 0, 1, 0], np.eye(4), 0.0)}
        before = beliefs["a"].mean.copy()
        ms = [Measurement("b", 0.2, (5.0, 5.0)), Measurement("a", 0.1, (0.1, 0.0))]
        out = predict_all(beliefs, ms, 0.5, model)
        assert sorted(out) == ["a", "b"]
        assert np.array_equal(beliefs["a"].mean, before)
        assert out["a"].pose.x > 0.5
