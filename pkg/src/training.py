"""
Training for the airflow estimators: per-session feature builders, sliding
windows, Adam with a triangular cyclic learning rate, and the early-stopping
train loop.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import root_validator, validator

from .caching_service import cached, feature_cache
from .config import settings
from .estimators import AtmosphereParams, AttitudeGains, pressure_to_altitude, run_attitude_observer
from .geometry import quaternions_from_rotations, rotations_from_quaternions
from .models import (
    ACCEL_COLUMNS,
    ANEMOMETER_COLUMNS,
    ESC_COLUMNS,
    GT_ACCEL_COLUMNS,
    GT_QUATERNION_COLUMNS,
    GT_VELOCITY_COLUMNS,
    GYRO_COLUMNS,
    MAG_COLUMNS,
    DataError,
    DivergenceError,
    EmptyBatchError,
    EpochRecord,
    NetworkKind,
    StrictModel,
)
from .network import NetworkSpec, Weights, init_weights, network_forward, network_gradients
from .simulator import BASE_RATE_HZ

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Status input column holding the barometric altitude; re-zeroed per window.
STATUS_BARO_CHANNEL = 5


class TrainConfig(StrictModel):
    """Windowing, optimizer and stopping settings shared by the three networks."""
    batch_size: int = 512
    velocity_window_s: float = 1.0        # s
    acceleration_window_s: float = 0.5    # s
    status_window_s: float = 0.5          # s
    window_stride: int = 20               # samples between training windows
    base_lr: float = 1e-4
    max_lr: float = 3e-3
    clr_cycle_epochs: float = 8.0         # epochs per full triangle
    patience: int = 10                    # epochs without validation improvement
    max_epochs: int = 60
    seed: int = 0
    workers: Optional[int] = None         # threads for sharded gradients; None uses AEOLUS_TRAIN_WORKERS
    feature_boxcar: int = 20              # samples, |a_m| and |g_m| means of the status net
    inference_stride: int = 8             # base ticks between network evaluations during estimation

    @validator("velocity_window_s", "acceleration_window_s", "status_window_s")
    def validate_window(cls, v: float) -> float:
        """Windows must be a whole number of base-grid samples."""
        samples = v * BASE_RATE_HZ
        if v <= 0 or abs(samples - round(samples)) > 1e-9:
            raise ValueError(f"window length x {BASE_RATE_HZ} Hz must be a positive integer")
        return v

    @validator("batch_size", "window_stride", "patience", "max_epochs", "feature_boxcar", "inference_stride")
    def validate_positive_int(cls, v: int) -> int:
        """Counts are positive."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("workers")
    def validate_workers(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v <= 0:
            raise ValueError("workers must be positive")
        return v

    @root_validator(skip_on_failure=True)
    def validate_learning_rates(cls, values: Dict) -> Dict:
        """0 < base_lr <= max_lr and a positive cycle."""
        if not 0 < values["base_lr"] <= values["max_lr"]:
            raise ValueError("learning rates must satisfy 0 < base_lr <= max_lr")
        if values["clr_cycle_epochs"] <= 0:
            raise ValueError("clr_cycle_epochs must be positive")
        return values

    def window_samples(self, kind: NetworkKind) -> int:
        seconds = {
            NetworkKind.VELOCITY: self.velocity_window_s,
            NetworkKind.ACCELERATION: self.acceleration_window_s,
            NetworkKind.STATUS: self.status_window_s,
        }[NetworkKind(kind)]
        return int(round(seconds * BASE_RATE_HZ))


# Learning-rate schedule and optimizer

def clr_learning_rate(step: int, base_lr: float, max_lr: float, period_steps: float) -> float:
    """Triangular cyclic rate: base at 0 and every full period, max at half period."""
    half = period_steps / 2.0
    cycle = math.floor(1 + step / (2.0 * half))
    x = abs(step / half - 2 * cycle + 1)
    return base_lr + (max_lr - base_lr) * max(0.0, 1.0 - x)


@dataclass
class AdamState:
    """First and second moments; step counts completed updates."""
    m: Weights
    v: Weights
    step: int = 0

    @classmethod
    def zeros(cls, weights: Weights) -> "AdamState":
        return cls(weights.zeros_like(), weights.zeros_like(), 0)


def adam_clr_step(
    weights: Weights,
    grads: Weights,
    state: AdamState,
    step_index: int,
    cfg: TrainConfig,
    steps_per_epoch: int = 1,
) -> Tuple[Weights, AdamState, float]:
    """
    One Adam update at the cyclic learning rate of step_index.

    Returns:
        (new weights, new optimizer state, learning rate used)
    """
    lr = clr_learning_rate(step_index, cfg.base_lr, cfg.max_lr, cfg.clr_cycle_epochs * steps_per_epoch)
    t = state.step + 1
    new = weights.copy()
    m = state.m.copy()
    v = state.v.copy()
    for name, param, g in grads.items():
        m.layers[name][param] = ADAM_BETA1 * m.layers[name][param] + (1.0 - ADAM_BETA1) * g
        v.layers[name][param] = ADAM_BETA2 * v.layers[name][param] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m.layers[name][param] / (1.0 - ADAM_BETA1 ** t)
        v_hat = v.layers[name][param] / (1.0 - ADAM_BETA2 ** t)
        new.layers[name][param] = weights.layers[name][param] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new, AdamState(m, v, t), lr


# Windows

class WindowBatch(NamedTuple):
    x: np.ndarray          # (N, W, C)
    y: np.ndarray          # (N, K) or (N,) class labels
    end_index: np.ndarray  # row of each window's last sample


def make_windows(
    features: np.ndarray,
    targets: np.ndarray,
    window: int,
    stride: int = 1,
    relative_channels: Sequence[int] = (),
) -> WindowBatch:
    """
    Slide a window over one session.

    Each window ends at row i >= window - 1 and is labelled with targets[i].
    Channels in relative_channels are shifted so the window starts at zero.

    Raises:
        EmptyBatchError: Session shorter than one window
    """
    features = np.asarray(features, dtype=float)
    n = len(features)
    if n < window:
        raise EmptyBatchError(
            f"Session of {n} samples is shorter than a {window}-sample window",
            {"samples": n, "window": window},
        )
    x = sliding_window_view(features, window, axis=0)[::stride].transpose(0, 2, 1)
    x = np.array(x)
    for c in relative_channels:
        x[:, :, c] -= x[:, :1, c]
    end_index = np.arange(window - 1, n)[::stride]
    return WindowBatch(x, np.asarray(targets)[end_index], end_index)


def concat_windows(batches: List[WindowBatch]) -> WindowBatch:
    """Stack per-session windows; sessions never share a window."""
    if not batches:
        raise EmptyBatchError("No sessions to window")
    return WindowBatch(
        np.concatenate([b.x for b in batches]),
        np.concatenate([b.y for b in batches]),
        np.concatenate([b.end_index for b in batches]),
    )


# Feature builders

def filled(frame: pd.DataFrame, columns: List[str]) -> np.ndarray:
    """Sample-and-hold a sparse stream onto the base grid."""
    block = frame[columns].ffill().bfill()
    if block.isna().any().any():
        missing = [c for c in columns if block[c].isna().all()]
        raise DataError("Stream has no samples", {"columns": missing})
    return block.to_numpy(dtype=float)


def has_truth(frame: pd.DataFrame) -> bool:
    return all(c in frame.columns for c in GT_VELOCITY_COLUMNS + GT_QUATERNION_COLUMNS + GT_ACCEL_COLUMNS) and not (
        frame[GT_VELOCITY_COLUMNS[0]].isna().all()
    )


def truth_rotations(frame: pd.DataFrame) -> np.ndarray:
    return rotations_from_quaternions(frame[GT_QUATERNION_COLUMNS].to_numpy(dtype=float))


def body_velocity_targets(frame: pd.DataFrame) -> np.ndarray:
    """R^T V from the ground-truth columns."""
    rotations = truth_rotations(frame)
    return np.einsum("nji,nj->ni", rotations, frame[GT_VELOCITY_COLUMNS].to_numpy(dtype=float))


@cached(feature_cache, "attitude")
def attitude_pass(frame: pd.DataFrame, gains: AttitudeGains) -> np.ndarray:
    """
    Observer attitude history of a session for building training features.

    On simulated logs the acceleration feed is the true inertial acceleration
    at every tick. At estimation the feed is the acceleration network output
    of the previous tick, and only in air, so features seen in training carry
    a slightly cleaner attitude than the ones seen at inference. Logs without
    truth run the observer without the feed.
    """
    t = frame["t"].to_numpy(dtype=float)
    accel = frame[ACCEL_COLUMNS].to_numpy(dtype=float)
    gyro = frame[GYRO_COLUMNS].to_numpy(dtype=float)
    mag = frame[MAG_COLUMNS].to_numpy(dtype=float) if set(MAG_COLUMNS) <= set(frame.columns) else None
    vdot = frame[GT_ACCEL_COLUMNS].to_numpy(dtype=float) if has_truth(frame) else None
    return run_attitude_observer(t, accel, gyro, mag, gains, vdot)


def velocity_features(frame: pd.DataFrame) -> np.ndarray:
    """(T, 7): four anemometer channels and the gyro."""
    return filled(frame, ANEMOMETER_COLUMNS + GYRO_COLUMNS)


def acceleration_features(frame: pd.DataFrame, rotations: np.ndarray) -> np.ndarray:
    """(T, 13): anemometers, ESC, attitude quaternion vector part, voltage, current."""
    quats = quaternions_from_rotations(rotations)
    return np.column_stack((
        filled(frame, ANEMOMETER_COLUMNS),
        filled(frame, ESC_COLUMNS),
        quats[:, 1:],
        filled(frame, ["voltage", "current"]),
    ))


def _boxcar(values: np.ndarray, window: int) -> np.ndarray:
    return pd.Series(values).rolling(window, min_periods=1).mean().to_numpy()


def status_features(
    frame: pd.DataFrame,
    boxcar: int = 20,
    atmosphere: Optional[AtmosphereParams] = None,
) -> np.ndarray:
    """
    (T, 8) status inputs.

    Vertical-pair mean and difference, mean ESC, voltage, current, barometric
    altitude, and boxcar means of |a_m| and |g_m|.
    """
    anem = filled(frame, ANEMOMETER_COLUMNS)
    esc = filled(frame, ESC_COLUMNS)
    battery = filled(frame, ["voltage", "current"])
    altitude = pressure_to_altitude(filled(frame, ["pressure"])[:, 0], atmosphere)
    accel_norm = np.linalg.norm(filled(frame, ACCEL_COLUMNS), axis=1)
    gyro_norm = np.linalg.norm(filled(frame, GYRO_COLUMNS), axis=1)
    return np.column_stack((
        0.5 * (anem[:, 2] + anem[:, 3]),
        anem[:, 2] - anem[:, 3],
        esc.mean(axis=1),
        battery,
        altitude,
        _boxcar(accel_norm, boxcar),
        _boxcar(gyro_norm, boxcar),
    ))


def session_windows(
    frame: pd.DataFrame,
    kind: NetworkKind,
    cfg: TrainConfig,
    attitude_gains: Optional[AttitudeGains] = None,
    stride: Optional[int] = None,
) -> WindowBatch:
    """Training windows of one session with ground-truth targets."""
    if not has_truth(frame):
        raise DataError("Training needs ground-truth columns", {"kind": NetworkKind(kind).value})
    kind = NetworkKind(kind)
    window = cfg.window_samples(kind)
    stride = stride or cfg.window_stride
    if kind == NetworkKind.VELOCITY:
        return make_windows(velocity_features(frame), body_velocity_targets(frame), window, stride)
    if kind == NetworkKind.ACCELERATION:
        rotations = attitude_pass(frame, attitude_gains or AttitudeGains())
        return make_windows(
            acceleration_features(frame, rotations),
            frame[GT_ACCEL_COLUMNS].to_numpy(dtype=float),
            window,
            stride,
        )
    return make_windows(
        status_features(frame, cfg.feature_boxcar),
        frame["status"].to_numpy().astype(int),
        window,
        stride,
        relative_channels=(STATUS_BARO_CHANNEL,),
    )


def dataset_windows(
    frames: List[pd.DataFrame],
    kind: NetworkKind,
    cfg: TrainConfig,
    attitude_gains: Optional[AttitudeGains] = None,
) -> WindowBatch:
    return concat_windows([session_windows(f, kind, cfg, attitude_gains) for f in frames])


# Train loop

@dataclass
class TrainResult:
    weights: Weights
    history: List[EpochRecord]
    best_epoch: int

    @property
    def checksum(self) -> str:
        return self.weights.checksum()


def normalization(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over windows and time; flat channels get std 1."""
    mean = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    return mean, np.where(std < 1e-8, 1.0, std)


def batch_gradients(
    spec: NetworkSpec,
    weights: Weights,
    x: np.ndarray,
    y: np.ndarray,
    pool: Optional[ThreadPoolExecutor] = None,
    shards: int = 1,
) -> Tuple[float, Weights]:
    """
    Loss and gradients of one batch, optionally sharded over a thread pool.

    Shard results are combined in shard order so the sum is bit-stable.
    """
    if pool is None or shards <= 1 or len(x) < 2:
        return network_gradients(spec, weights, x, y)
    parts = [p for p in np.array_split(np.arange(len(x)), shards) if len(p)]
    results = list(pool.map(lambda idx: network_gradients(spec, weights, x[idx], y[idx]), parts))
    total = weights.zeros_like()
    loss = 0.0
    for idx, (part_loss, part_grads) in zip(parts, results):
        share = len(idx) / len(x)
        loss += share * part_loss
        for name, param, g in part_grads.items():
            total.layers[name][param] += share * g
    return loss, total


def evaluate_loss(spec: NetworkSpec, weights: Weights, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> float:
    """Mean loss over a window set, computed in batches."""
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(x), batch_size):
        xb, yb = x[i:i + batch_size], y[i:i + batch_size]
        out = network_forward(spec, weights, xb)
        if spec.is_classifier:
            p = out[np.arange(len(xb)), yb.astype(int)]
            total += -float(np.sum(np.log(np.maximum(p, 1e-300))))
        else:
            total += float(np.sum((out - yb) ** 2)) / yb.shape[1]
    return total / len(x)


def train(
    spec: NetworkSpec,
    train_set: WindowBatch,
    val_set: Optional[WindowBatch],
    cfg: TrainConfig,
    initial: Optional[Weights] = None,
) -> TrainResult:
    """
    Mini-batch training with early stopping on validation loss.

    Returns the weights of the best validation epoch.

    Raises:
        DivergenceError: A batch loss became NaN or infinite
    """
    x, y = train_set.x, train_set.y
    if len(x) == 0:
        raise EmptyBatchError("No training windows")
    weights = initial.copy() if initial is not None else init_weights(spec, cfg.seed)
    weights.mean, weights.std = normalization(x)
    has_val = val_set is not None and len(val_set.x) > 0
    if not has_val:
        logger.warning("No validation windows; selecting the best epoch on training loss")

    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    workers = cfg.workers or settings.TRAIN_WORKERS
    state = AdamState.zeros(weights)
    history: List[EpochRecord] = []
    best_loss = math.inf
    best_weights = weights.copy()
    best_epoch = 0
    step = 0

    logger.info(
        f"Training {spec.kind.value} network on {n} windows "
        f"({steps_per_epoch} steps/epoch, {workers} worker(s))"
    )
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(n)
            epoch_loss = 0.0
            lr = cfg.base_lr
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss, grads = batch_gradients(spec, weights, x[idx], y[idx], pool, workers)
                if not math.isfinite(loss):
                    raise DivergenceError(
                        f"Loss became {loss} at epoch {epoch}, step {step}",
                        {"epoch": epoch, "step": step},
                    )
                weights, state, lr = adam_clr_step(weights, grads, state, step, cfg, steps_per_epoch)
                epoch_loss += loss * len(idx)
                step += 1
            train_loss = epoch_loss / n
            val_loss = evaluate_loss(spec, weights, val_set.x, val_set.y, cfg.batch_size) if has_val else train_loss
            if not math.isfinite(val_loss):
                raise DivergenceError(f"Validation loss became {val_loss} at epoch {epoch}", {"epoch": epoch})
            history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr))
            logger.info(f"{spec.kind.value} epoch {epoch}: train {train_loss:.6g}, val {val_loss:.6g}, lr {lr:.3g}")
            if val_loss < best_loss:
                best_loss, best_weights, best_epoch = val_loss, weights.copy(), epoch
            elif epoch - best_epoch >= cfg.patience:
                logger.info(f"Early stop at epoch {epoch}; best epoch {best_epoch} (val {best_loss:.6g})")
                break
    finally:
        if pool is not None:
            pool.shutdown()

    best_weights.meta = {"best_epoch": str(best_epoch), "val_loss": repr(best_loss)}
    return TrainResult(best_weights, history, best_epoch)


def write_history(path: Union[str, Path], history: List[EpochRecord]) -> None:
    """Per-epoch train loss, validation loss and lr as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.dict() for r in history], columns=["epoch", "train_loss", "val_loss", "lr"]).to_csv(
        path, index=False, float_format="%.17g"
    )


def status_accuracy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of windows whose argmax class matches the label."""
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(probabilities, axis=1) == np.asarray(labels).astype(int)))
