import numpy as np
import pytest

from mpcc_warmstart.mpcc import LaneMarkers
from mpcc_warmstart.prediction import (
    AgentHistory,
    ConstantVelocityPredictor,
    MissingEgoHistory,
    OracleGmmPredictor,
    PredictorConfig,
    make_predictor,
)
from mpcc_warmstart.vehicle import Trajectory

from helpers import straight_path

LANES = LaneMarkers(np.array([-1.75, 1.75]))


def hist(agent_id, x, y, psi, v, lane=None, t=0.0):
    return AgentHistory(agent_id, np.array([t]), np.array([[x, y, psi, v]]), lane_offset=lane)


def mode_trajectory(mode):
    """Positions-only trajectory for homotopy checks."""
    n = mode.steps
    Z = np.zeros((n, 7))
    Z[:, 0] = mode.means[:, 0]
    Z[:, 1] = mode.means[:, 1]
    return Trajectory(Z, np.zeros((n - 1, 3)))


def test_cv_predictor_straight_extrapolation():
    path = straight_path()
    cfg = PredictorConfig(T_s=0.1, sigma0=0.2, growth=0.003)
    pred = ConstantVelocityPredictor(cfg)
    fc = pred.predict([hist(0, 5.0, 1.0, 0.0, 10.0)], path, LANES, horizon=30)
    assert len(fc.ego_modes) == 1
    mode = fc.ego_modes[0]
    k = np.arange(31)
    np.testing.assert_allclose(mode.means[:, 0], 5.0 + 10.0 * k * 0.1, atol=1e-12)
    np.testing.assert_allclose(mode.means[:, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(
        mode.covariances, (0.2**2 + k * 0.003)[:, None, None] * np.eye(2), atol=1e-15
    )
    assert fc.obstacles == []


def test_missing_ego_history_raises():
    pred = ConstantVelocityPredictor(PredictorConfig())
    with pytest.raises(MissingEgoHistory):
        pred.predict([hist(3, 0, 0, 0, 5)], straight_path(), LANES, horizon=10)


def test_probabilities_sum_to_one_and_spd():
    path = straight_path()
    cfg = PredictorConfig(scenario_kind="merge", merge_target_offset=0.0)
    pred = OracleGmmPredictor(cfg)
    histories = [
        hist(0, 10.0, -3.5, 0.0, 9.0, lane=-3.5),
        hist(1, 30.0, 0.0, 0.0, 10.0, lane=0.0),
        hist(2, 55.0, 0.0, 0.0, 11.0, lane=0.0),
    ]
    fc = pred.predict(histories, path, LANES, horizon=30)
    assert abs(sum(m.probability for m in fc.ego_modes) - 1.0) < 1e-9
    for m in fc.ego_modes:
        for k in range(m.steps):
            np.linalg.cholesky(m.covariances[k])  # SPD at every step


def test_merge_with_two_cars_gives_three_gap_modes():
    path = straight_path()
    cfg = PredictorConfig(scenario_kind="merge", mode_cap=3)
    pred = OracleGmmPredictor(cfg)
    histories = [
        hist(0, 30.0, -3.5, 0.0, 10.0, lane=-3.5),
        hist(1, 25.0, 0.0, 0.0, 10.0, lane=0.0),
        hist(2, 55.0, 0.0, 0.0, 10.0, lane=0.0),
    ]
    fc = pred.predict(histories, path, LANES, horizon=30)
    assert len(fc.ego_modes) == 3
    assert len(fc.obstacles) == 2


def test_no_traffic_single_lane_keep_mode():
    path = straight_path()
    for kind in ("merge", "oncoming_overtake", "crossing", "lane_keep"):
        pred = OracleGmmPredictor(PredictorConfig(scenario_kind=kind))
        fc = pred.predict([hist(0, 10.0, 0.0, 0.0, 10.0, lane=0.0)], path, LANES, horizon=20)
        assert len(fc.ego_modes) == 1


def test_overtake_modes_have_distinct_homotopy_signatures():
    from mpcc_warmstart.warmstart import homotopy_signature

    path = straight_path(length=300.0)
    cfg = PredictorConfig(scenario_kind="oncoming_overtake", desired_speed=13.0)
    pred = OracleGmmPredictor(cfg)
    histories = [
        hist(0, 10.0, 0.0, 0.0, 11.0, lane=0.0),
        hist(1, 35.0, 0.0, 0.0, 3.0, lane=0.0),  # slow leader
    ]
    fc = pred.predict(histories, path, LANES, horizon=30)
    assert len(fc.ego_modes) == 2
    sigs = {homotopy_signature(mode_trajectory(m), fc.obstacles) for m in fc.ego_modes}
    assert len(sigs) == 2  # overtake vs. follow live in different classes


def test_two_gap_merge_covers_two_homotopy_classes():
    from mpcc_warmstart.warmstart import homotopy_signature

    path = straight_path(length=300.0)
    cfg = PredictorConfig(scenario_kind="merge", mode_cap=3)
    pred = OracleGmmPredictor(cfg)
    histories = [
        hist(0, 38.0, -3.5, 0.0, 10.0, lane=-3.5),
        hist(1, 30.0, 0.0, 0.0, 9.0, lane=0.0),
        hist(2, 60.0, 0.0, 0.0, 9.0, lane=0.0),
    ]
    fc = pred.predict(histories, path, LANES, horizon=30)
    sigs = {homotopy_signature(mode_trajectory(m), fc.obstacles) for m in fc.ego_modes}
    assert len(sigs) >= 2


def test_crossing_yields_brake_and_proceed_modes():
    path = straight_path(length=200.0)
    cfg = PredictorConfig(scenario_kind="crossing")
    pred = OracleGmmPredictor(cfg)
    histories = [
        hist(0, 10.0, 0.0, 0.0, 12.0, lane=0.0),
        hist(1, 45.0, -12.0, np.pi / 2, 6.0, lane=None),  # crossing from the right
    ]
    fc = pred.predict(histories, path, LANES, horizon=30)
    assert len(fc.ego_modes) == 2
    names = {m.name for m in fc.ego_modes}
    assert names == {"yield", "proceed"}
    # The yield mode actually slows down.
    yield_mode = next(m for m in fc.ego_modes if m.name == "yield")
    proceed = next(m for m in fc.ego_modes if m.name == "proceed")
    assert yield_mode.means[-1, 0] < proceed.means[-1, 0] - 3.0


def test_oracle_prediction_deterministic_given_seed():
    path = straight_path()
    cfg = PredictorConfig(scenario_kind="merge", mean_noise_std=0.2, seed=11)
    histories = [
        hist(0, 30.0, -3.5, 0.0, 10.0, lane=-3.5),
        hist(1, 40.0, 0.0, 0.0, 10.0, lane=0.0),
    ]
    a = OracleGmmPredictor(cfg).predict(histories, path, LANES, horizon=20)
    b = OracleGmmPredictor(cfg).predict(histories, path, LANES, horizon=20)
    for ma, mb in zip(a.ego_modes, b.ego_modes):
        np.testing.assert_array_equal(ma.means, mb.means)


def test_make_predictor_factory():
    assert isinstance(make_predictor("oracle_gmm", PredictorConfig()), OracleGmmPredictor)
    assert isinstance(make_predictor("constant_velocity", PredictorConfig()), ConstantVelocityPredictor)
    with pytest.raises(ValueError):
        make_predictor("mtr", PredictorConfig())


def test_history_validation():
    with pytest.raises(ValueError):
        AgentHistory(0, np.array([0.0, 0.0]), np.zeros((2, 4)))
    h = AgentHistory(0, np.array([0.0, 0.1]), np.arange(8.0).reshape(2, 4))
    np.testing.assert_array_equal(h.current, [4, 5, 6, 7])
