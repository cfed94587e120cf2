from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from src.estimators import AttitudeGains, run_attitude_observer
from src.models import (
    ACCEL_COLUMNS,
    GT_ACCEL_COLUMNS,
    GYRO_COLUMNS,
    MAG_COLUMNS,
    DataError,
    DivergenceError,
    EmptyBatchError,
    NetworkKind,
)
from src.network import Conv1DSpec, DenseSpec, GRUSpec, NetworkSpec, Weights, init_weights, network_gradients
from src.simulator import ScenarioConfig, SensorRig, VehicleParams, simulate_session
from src.training import (
    STATUS_BARO_CHANNEL,
    AdamState,
    TrainConfig,
    WindowBatch,
    adam_clr_step,
    attitude_pass,
    batch_gradients,
    body_velocity_targets,
    clr_learning_rate,
    concat_windows,
    evaluate_loss,
    make_windows,
    session_windows,
    status_accuracy,
    train,
    write_history,
)


@pytest.fixture
def toy_spec():
    return NetworkSpec(
        kind=NetworkKind.VELOCITY,
        input_channels=["u", "w"],
        window_samples=5,
        layers=[
            Conv1DSpec(filters=4, kernel=3, activation="linear"),
            GRUSpec(units=6, return_sequences=False),
            DenseSpec(units=1),
        ],
    )


def toy_windows(n, seed):
    """Targets are half the first channel at the last step."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 5, 2))
    return WindowBatch(x, 0.5 * x[:, -1, :1], np.arange(n))


@pytest.fixture(scope="module")
def session():
    cfg = ScenarioConfig(duration_s=30.0, seed=2)
    return simulate_session(cfg, VehicleParams(), SensorRig())


class TestCyclicLearningRate:
    """Tests for the triangular schedule."""

    def test_triangle(self):
        lr = lambda s: clr_learning_rate(s, 1e-3, 2e-2, 8)
        assert lr(0) == pytest.approx(1e-3)
        assert lr(2) == pytest.approx(0.5 * (1e-3 + 2e-2))
        assert lr(4) == pytest.approx(2e-2)
        assert lr(8) == pytest.approx(1e-3)
        assert lr(12) == pytest.approx(2e-2)

    def test_stays_in_range(self):
        rates = [clr_learning_rate(s, 1e-4, 3e-3, 10) for s in range(100)]
        assert min(rates) >= 1e-4 - 1e-15 and max(rates) <= 3e-3 + 1e-15

    def test_first_adam_step_moves_by_base_rate(self, toy_spec):
        weights = init_weights(toy_spec, seed=0)
        grads = weights.zeros_like()
        for _, _, g in grads.items():
            g[...] = -0.5
        cfg = TrainConfig(base_lr=1e-3)
        new, state, lr = adam_clr_step(weights, grads, AdamState.zeros(weights), 0, cfg)
        assert lr == pytest.approx(1e-3)
        assert state.step == 1
        for name, param, before in weights.items():
            np.testing.assert_allclose(new.layers[name][param] - before, 1e-3, rtol=1e-6)

    def test_zero_gradients_leave_weights_unchanged(self, toy_spec):
        weights = init_weights(toy_spec, seed=0)
        state = AdamState.zeros(weights)
        cfg = TrainConfig()
        for step in range(5):
            new, state, _ = adam_clr_step(weights, weights.zeros_like(), state, step, cfg)
            for name, param, before in weights.items():
                np.testing.assert_array_equal(new.layers[name][param], before)
        assert state.step == 5

    def test_fixed_rate_descends_a_quadratic(self):
        # Loss (theta - target)^2 / 2 on a single parameter.
        target = 0.25
        weights = Weights({"p": {"theta": np.array([1.25])}}, np.zeros(1), np.ones(1))
        cfg = TrainConfig(base_lr=1e-3, max_lr=1e-3)
        state = AdamState.zeros(weights)
        distances = []
        for step in range(3000):
            grads = Weights({"p": {"theta": weights.layers["p"]["theta"] - target}}, np.zeros(1), np.ones(1))
            weights, state, lr = adam_clr_step(weights, grads, state, step, cfg)
            assert lr == pytest.approx(1e-3)
            distances.append(abs(float(weights.layers["p"]["theta"][0]) - target))
        assert distances[0] == pytest.approx(1.0 - 1e-3, rel=1e-6)
        assert all(b <= a for a, b in zip(distances[10:], distances[11:]))
        assert distances[-1] < 0.05


class TestWindows:
    """Tests for sliding windows."""

    def test_count_and_end_indices(self):
        features = np.arange(4000 * 3, dtype=float).reshape(4000, 3)
        batch = make_windows(features, np.arange(4000), 400)
        assert batch.x.shape == (3601, 400, 3)
        assert batch.end_index[0] == 399 and batch.end_index[-1] == 3999
        np.testing.assert_array_equal(batch.x[10, -1], features[409])
        np.testing.assert_array_equal(batch.y, batch.end_index)

    def test_stride(self):
        batch = make_windows(np.zeros((4000, 1)), np.zeros(4000), 400, stride=20)
        assert len(batch.x) == 181
        np.testing.assert_array_equal(np.diff(batch.end_index), 20)

    def test_relative_channel_starts_at_zero(self):
        features = np.column_stack((np.arange(50.0), 100.0 + np.arange(50.0)))
        batch = make_windows(features, np.zeros(50), 10, relative_channels=(1,))
        np.testing.assert_array_equal(batch.x[:, 0, 1], 0.0)
        np.testing.assert_array_equal(batch.x[:, :, 0], make_windows(features, np.zeros(50), 10).x[:, :, 0])

    def test_short_session(self):
        with pytest.raises(EmptyBatchError):
            make_windows(np.zeros((10, 2)), np.zeros(10), 20)
        with pytest.raises(EmptyBatchError):
            concat_windows([])


class TestSessionWindows:
    """Tests for the per-network feature builders."""

    def test_velocity_targets_are_body_frame(self, session):
        cfg = TrainConfig()
        batch = session_windows(session, NetworkKind.VELOCITY, cfg)
        assert batch.x.shape[1:] == (400, 7)
        np.testing.assert_allclose(batch.y, body_velocity_targets(session)[batch.end_index])
        assert np.all(np.isfinite(batch.x))

    def test_status_windows(self, session):
        batch = session_windows(session, NetworkKind.STATUS, TrainConfig())
        assert batch.x.shape[1:] == (200, 8)
        np.testing.assert_array_equal(batch.x[:, 0, STATUS_BARO_CHANNEL], 0.0)
        assert set(np.unique(batch.y)) == {0, 1}

    def test_acceleration_windows(self, session):
        batch = session_windows(session, NetworkKind.ACCELERATION, TrainConfig(window_stride=200))
        assert batch.x.shape[1:] == (200, 13)
        assert batch.y.shape == (len(batch.x), 3)

    def test_attitude_pass_feeds_true_acceleration(self, session):
        gains = AttitudeGains()
        rotations = attitude_pass(session, gains)
        columns = lambda names: session[names].to_numpy(dtype=float)
        fed = run_attitude_observer(session["t"].to_numpy(), columns(ACCEL_COLUMNS), columns(GYRO_COLUMNS),
                                    columns(MAG_COLUMNS), gains, columns(GT_ACCEL_COLUMNS))
        np.testing.assert_array_equal(rotations, fed)

        sensors_only = session.drop(columns=[c for c in session.columns if c.startswith("gt_")])
        unfed = run_attitude_observer(session["t"].to_numpy(), columns(ACCEL_COLUMNS), columns(GYRO_COLUMNS),
                                      columns(MAG_COLUMNS), gains)
        np.testing.assert_array_equal(attitude_pass(sensors_only, gains), unfed)
        assert not np.array_equal(rotations, unfed)

    def test_requires_truth(self, session):
        sensors_only = session.drop(columns=[c for c in session.columns if c.startswith("gt_")])
        with pytest.raises(DataError):
            session_windows(sensors_only, NetworkKind.VELOCITY, TrainConfig())


class TestTrainConfig:
    """Tests for training settings validation."""

    def test_window_must_be_whole_samples(self):
        with pytest.raises(ValidationError):
            TrainConfig(velocity_window_s=0.0013)

    def test_learning_rate_order(self):
        with pytest.raises(ValidationError):
            TrainConfig(base_lr=1e-2, max_lr=1e-3)

    def test_window_samples(self):
        cfg = TrainConfig()
        assert cfg.window_samples(NetworkKind.VELOCITY) == 400
        assert cfg.window_samples(NetworkKind.STATUS) == 200


class TestTrainLoop:
    """Tests for gradients, the optimizer loop and its outputs."""

    def test_sharded_gradients_match(self, toy_spec):
        weights = init_weights(toy_spec, seed=1)
        batch = toy_windows(7, seed=2)
        loss, grads = network_gradients(toy_spec, weights, batch.x, batch.y)
        with ThreadPoolExecutor(max_workers=3) as pool:
            sharded_loss, sharded = batch_gradients(toy_spec, weights, batch.x, batch.y, pool, shards=3)
        assert sharded_loss == pytest.approx(loss, rel=1e-12)
        for name, param, g in grads.items():
            np.testing.assert_allclose(sharded.layers[name][param], g, rtol=1e-10, atol=1e-15)

    def test_history_and_best_epoch(self, toy_spec, tmp_path):
        cfg = TrainConfig(batch_size=16, max_epochs=4, patience=10, workers=1, base_lr=1e-3, max_lr=1e-2)
        result = train(toy_spec, toy_windows(64, 0), toy_windows(32, 1), cfg)
        assert [r.epoch for r in result.history] == [1, 2, 3, 4]
        assert 1 <= result.best_epoch <= 4
        best = min(result.history, key=lambda r: r.val_loss)
        assert best.epoch == result.best_epoch
        assert result.weights.meta["best_epoch"] == str(result.best_epoch)

        path = tmp_path / "history.csv"
        write_history(path, result.history)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["epoch", "train_loss", "val_loss", "lr"]
        assert len(frame) == 4

    def test_same_seed_is_deterministic(self, toy_spec):
        cfg = TrainConfig(batch_size=16, max_epochs=2, workers=1)
        a = train(toy_spec, toy_windows(48, 0), None, cfg)
        b = train(toy_spec, toy_windows(48, 0), None, cfg)
        assert a.checksum == b.checksum

    def test_nan_targets_diverge(self, toy_spec):
        batch = toy_windows(32, 0)
        batch.y[3] = np.nan
        with pytest.raises(DivergenceError):
            train(toy_spec, batch, None, TrainConfig(batch_size=8, max_epochs=2, workers=1))

    def test_empty_training_set(self, toy_spec):
        with pytest.raises(EmptyBatchError):
            train(toy_spec, WindowBatch(np.zeros((0, 5, 2)), np.zeros((0, 1)), np.zeros(0, int)), None, TrainConfig())

    @pytest.mark.slow
    def test_toy_problem_converges(self, toy_spec):
        cfg = TrainConfig(batch_size=32, max_epochs=150, patience=50, base_lr=1e-3, max_lr=2e-2,
                          clr_cycle_epochs=8.0, workers=1)
        train_set, val_set = toy_windows(512, 0), toy_windows(128, 1)
        untrained = init_weights(toy_spec, cfg.seed)
        untrained.mean, untrained.std = np.zeros(2), np.ones(2)
        before = evaluate_loss(toy_spec, untrained, val_set.x, val_set.y)
        result = train(toy_spec, train_set, val_set, cfg)
        after = evaluate_loss(toy_spec, result.weights, val_set.x, val_set.y)
        assert after < 0.1 * before


class TestStatusAccuracy:
    def test_argmax(self):
        p = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
        assert status_accuracy(p, np.array([0, 1, 1, 1])) == pytest.approx(0.75)
        assert np.isnan(status_accuracy(np.zeros((0, 2)), np.zeros(0)))
