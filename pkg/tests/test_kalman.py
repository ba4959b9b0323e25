import math

import numpy as np
import pytest

import oracles
from fusetrack.kalman import (FilterError, ObservationModel, StateEstimate, TransitionModel,
                              VelocityObservation, initial_state, predict, predict_to, run_filter,
                              update, white_noise_accel_q)
from fusetrack.simulator import FIG5_VARIANCES, fig5_trace


def zero_q(dt):
    return TransitionModel(dt=dt, Q=np.zeros((2, 2)))


def test_noiseless_constant_velocity():
    est = predict(StateEstimate([0.0, 10.0], np.eye(2)), zero_q(1.0))
    assert est.x.tolist() == [10.0, 10.0]
    assert est.t == 1.0


@pytest.mark.parametrize("dt", [0.1, 1.0, 37.5, 1e4])
def test_zero_velocity_is_fixed(dt):
    est = predict(StateEstimate([5.0, 0.0], np.eye(2)), zero_q(dt))
    assert est.x.tolist() == [5.0, 0.0]


def test_predict_matches_direct_arithmetic():
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.normal(0, 50, 2)
        L = rng.normal(0, 3, (2, 2))
        P = L @ L.T
        M = rng.normal(0, 1, (2, 2))
        Q = M @ M.T
        dt = float(rng.uniform(0.01, 100))
        got = predict(StateEstimate(x, P), TransitionModel(dt=dt, Q=Q))
        ox, oP = oracles.cv_predict(tuple(x), P.tolist(), dt, Q.tolist())
        assert oracles.rel_err(got.x, ox) <= 1e-12
        assert oracles.rel_err(got.P, oP) <= 1e-12


def test_uninformative_measurement_leaves_prior():
    prior = StateEstimate([3.0, 12.0], np.eye(2), t=4.0)
    post = update(prior, VelocityObservation(4.0, 30.0), ObservationModel(R=1e12))
    np.testing.assert_allclose(post.x, prior.x, atol=1e-6)
    np.testing.assert_allclose(post.P, prior.P, atol=1e-6)


def test_confident_prior_ignores_measurement():
    prior = StateEstimate([3.0, 12.0], np.zeros((2, 2)))
    post = update(prior, VelocityObservation(0.0, 30.0), ObservationModel(R=4.0))
    assert post.x.tolist() == prior.x.tolist()
    assert post.P.tolist() == prior.P.tolist()


def test_three_steps_match_scalar_recursion():
    q, R = 0.3, 2.5
    obs = [(1.0, 14.0), (3.5, 16.5), (10.0, 11.0)]
    init = initial_state(0.0, 0.0, 12.0, (100.0, 25.0))
    out = run_filter(init, [VelocityObservation(t, z) for t, z in obs],
                     TransitionModel.constant_velocity(1.0, q), ObservationModel(R))
    expected = oracles.scalar_velocity_filter(12.0, 25.0, obs, 0.0, q, R)
    for est, (v, pvv) in zip(out[1:], expected):
        assert est.velocity == pytest.approx(v, rel=1e-12)
        assert est.velocity_var == pytest.approx(pvv, rel=1e-12)


def test_empty_sequence_returns_init():
    init = initial_state(5.0, 1.0, 2.0)
    out = run_filter(init, [], TransitionModel.constant_velocity(1.0), ObservationModel())
    assert len(out) == 1 and out[0] is init


def random_run(rng):
    n = int(rng.integers(0, 51))
    t0 = float(rng.uniform(-100, 100))
    times = t0 + np.cumsum(rng.uniform(0.01, 120, n))
    if n and rng.random() < 0.3:
        times[0] = t0  # first reading at the initial time: update only
    obs = [(float(t), float(rng.uniform(0, 40))) for t in times]
    x = (float(rng.normal(0, 100)), float(rng.uniform(0, 30)))
    p0 = (float(rng.uniform(0.1, 500)), float(rng.uniform(0.1, 100)))
    q, R = float(rng.uniform(0, 2)), float(rng.uniform(0.05, 20))
    return t0, x, p0, obs, q, R


def compare_random_run(rng) -> float:
    t0, x, p0, obs, q, R = random_run(rng)
    out = run_filter(initial_state(t0, x[0], x[1], p0),
                     [VelocityObservation(t, z) for t, z in obs],
                     TransitionModel.constant_velocity(1.0, q), ObservationModel(R))
    P = ((p0[0], 0.0), (0.0, p0[1]))
    ref = oracles.run_cv_filter(t0, x, P, obs, q, R)
    worst = 0.0
    for est, (ox, oP) in zip(out[1:], ref):
        worst = max(worst, oracles.rel_err(est.x, ox), oracles.rel_err(est.P, oP))
    assert len(out) == len(obs) + 1
    return worst


def test_random_sequences_match_oracle():
    rng = np.random.default_rng(5)
    worst = max(compare_random_run(rng) for _ in range(200))
    assert worst <= 1e-9


def test_observation_at_init_time_is_update_only():
    init = initial_state(10.0, 0.0, 12.0, (100.0, 25.0))
    model, obs = TransitionModel.constant_velocity(1.0, 0.1), ObservationModel(4.0)
    out = run_filter(init, [VelocityObservation(10.0, 15.0)], model, obs)
    direct = update(init, VelocityObservation(10.0, 15.0), obs)
    assert out[1].t == 10.0
    assert out[1].x.tolist() == direct.x.tolist()
    assert out[1].P.tolist() == direct.P.tolist()


def test_gap_rebuilds_process_noise():
    model = TransitionModel.constant_velocity(1.0, 0.5)
    est = predict_to(initial_state(0.0, 0.0, 10.0), 7.0, model)
    expected = np.diag([100.0, 25.0])
    A = np.array([[1.0, 7.0], [0.0, 1.0]])
    np.testing.assert_allclose(est.P, A @ expected @ A.T + white_noise_accel_q(7.0, 0.5), rtol=1e-13)


def test_non_monotonic_timestamps_rejected_with_index():
    seq = [VelocityObservation(1.0, 1.0), VelocityObservation(2.0, 1.0), VelocityObservation(2.0, 1.0)]
    with pytest.raises(FilterError, match="index 2"):
        run_filter(initial_state(), seq, TransitionModel.constant_velocity(1.0), ObservationModel())


def test_observation_before_init_rejected():
    with pytest.raises(FilterError, match="precedes"):
        run_filter(initial_state(t=5.0), [VelocityObservation(1.0, 1.0)],
                   TransitionModel.constant_velocity(1.0), ObservationModel())


def test_predict_backwards_rejected():
    with pytest.raises(FilterError):
        predict_to(initial_state(t=5.0), 4.0, TransitionModel.constant_velocity(1.0))


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_non_finite_observation_rejected(bad):
    with pytest.raises(FilterError):
        VelocityObservation(1.0, bad)


def test_invalid_models_rejected():
    with pytest.raises(FilterError):
        ObservationModel(R=0.0)
    with pytest.raises(FilterError):
        TransitionModel(dt=1.0, Q=np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(FilterError):
        TransitionModel.constant_velocity(0.0)


def test_non_finite_state_rejected():
    with pytest.raises(FilterError, match="non-finite"):
        predict(StateEstimate([0.0, math.nan], np.eye(2)), zero_q(1.0))


@pytest.mark.parametrize("panel", range(len(FIG5_VARIANCES)))
def test_sparse_readings_land_between_prediction_and_observation(panel):
    _, _, obs = fig5_trace(panel, seed=0)
    assert [o.t for o in obs] == [0.0, 2000.0, 4000.0]
    model, om = TransitionModel.constant_velocity(1.0), ObservationModel()
    est = initial_state(0.0, 0.0, obs[0].z)
    for ob in obs:
        prior = predict_to(est, ob.t, model)
        est = update(prior, ob, om)
        lo, hi = sorted((prior.velocity, ob.z))
        if lo < hi:
            assert lo < est.velocity < hi
