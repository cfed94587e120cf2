"""
Odometry metrics, estimates persistence and figure CSVs.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .geometry import rotations_from_quaternions
from .models import (
    GT_ACCEL_COLUMNS,
    GT_POSITION_COLUMNS,
    GT_QUATERNION_COLUMNS,
    GT_VELOCITY_COLUMNS,
    AxisMetrics,
    BiasErrors,
    DataError,
    OdometryMetrics,
    TimestampMismatchError,
    TransitionTiming,
)
from .odometry import BARO_REFERENCE_S
from .simulator import SensorRig
from .training import body_velocity_targets, has_truth

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_AXES = ("x", "y", "z")
POSITION_COLUMNS = [f"p{a}" for a in _AXES]
VELOCITY_COLUMNS = [f"v{a}" for a in _AXES]
ACCELERATION_COLUMNS = [f"a{a}" for a in _AXES]
ACCEL_BIAS_COLUMNS = [f"ba_{a}" for a in _AXES]
VELOCITY_BIAS_COLUMNS = [f"bw_{a}" for a in _AXES]
REQUIRED_ESTIMATE_COLUMNS = (
    ["t"] + POSITION_COLUMNS + VELOCITY_COLUMNS + ACCELERATION_COLUMNS
    + ACCEL_BIAS_COLUMNS + ["bw_z", "bb", "status"]
)
CONVERGENCE_TOL = 0.1
TIMESTAMP_TOL = 1e-9


def write_estimates(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="", lineterminator="\n")
    logger.info(f"Wrote {len(frame)} estimate rows to {path}")
    return path


def read_estimates(path: PathLike) -> pd.DataFrame:
    """
    Raises:
        DataError: File unreadable or missing estimate columns
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Cannot read estimates {path}: {e}", {"path": str(path)})
    missing = [c for c in REQUIRED_ESTIMATE_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"Estimates {path.name} lack columns {missing}", {"missing": missing})
    return frame


def _axes(values: np.ndarray) -> AxisMetrics:
    return AxisMetrics(x=float(values[0]), y=float(values[1]), z=float(values[2]))


def _rmse(error: np.ndarray) -> AxisMetrics:
    return _axes(np.sqrt(np.mean(np.square(error), axis=0)))


def convergence_time(t: np.ndarray, error: np.ndarray, truth: np.ndarray, tol: float = CONVERGENCE_TOL) -> Optional[float]:
    """
    First time after which |error| stays within tol * |truth|.

    None when the error is still outside the band at the last tick.
    """
    bound = tol * np.abs(truth)
    outside = np.abs(error) > bound
    if not outside.any():
        return float(t[0])
    last = int(np.flatnonzero(outside)[-1])
    if last == len(t) - 1:
        return None
    return float(t[last + 1])


def transition_times(t: np.ndarray, status: np.ndarray) -> List[float]:
    status = np.asarray(status).astype(int)
    change = np.flatnonzero(np.diff(status)) + 1
    return [float(t[i]) for i in change]


def transition_timing(t: np.ndarray, estimated: np.ndarray, truth: np.ndarray) -> TransitionTiming:
    """Transition times of both streams; errors pair them in order."""
    truth_s = transition_times(t, truth)
    estimated_s = transition_times(t, estimated)
    return TransitionTiming(
        truth_s=truth_s,
        estimated_s=estimated_s,
        errors_s=[e - s for e, s in zip(estimated_s, truth_s)],
        frame_accuracy=float(np.mean(np.asarray(estimated).astype(int) == np.asarray(truth).astype(int))),
    )


def _check_timestamps(estimates: pd.DataFrame, truth: pd.DataFrame) -> None:
    t_est = estimates["t"].to_numpy(dtype=float)
    t_true = truth["t"].to_numpy(dtype=float)
    if len(t_est) != len(t_true):
        raise TimestampMismatchError(
            f"Estimates have {len(t_est)} rows, dataset has {len(t_true)}",
            {"estimates": len(t_est), "dataset": len(t_true)},
        )
    mismatch = np.flatnonzero(np.abs(t_est - t_true) > TIMESTAMP_TOL)
    if len(mismatch):
        row = int(mismatch[0])
        raise TimestampMismatchError(
            f"Timestamps differ first at row {row + 1}",
            {"row": row + 1, "estimate_t": float(t_est[row]), "dataset_t": float(t_true[row])},
        )


def baro_bias_truth(t: np.ndarray, pressure_present: np.ndarray, rig: SensorRig) -> np.ndarray:
    """Rig baro bias relative to its mean over the barometer reference interval."""
    baro_t = t[pressure_present]
    reference = baro_t[baro_t - baro_t[0] < BARO_REFERENCE_S]
    return rig.baro_bias(t) - float(np.mean(rig.baro_bias(reference)))


def bias_errors(
    estimates: pd.DataFrame,
    truth: pd.DataFrame,
    rig: SensorRig,
    velocity_bias_z: Optional[float] = None,
) -> BiasErrors:
    """
    Final bias errors and convergence times against the synthetic rig.

    The lumped accelerometer bias truth is R b_a(body); the velocity bias truth
    is only known when one was injected.
    """
    t = estimates["t"].to_numpy(dtype=float)
    rotations = rotations_from_quaternions(truth[GT_QUATERNION_COLUMNS].to_numpy(dtype=float))
    accel_truth = rotations @ np.asarray(rig.accel_bias, dtype=float)
    accel_error = estimates[ACCEL_BIAS_COLUMNS].to_numpy(dtype=float) - accel_truth
    baro_truth = baro_bias_truth(t, ~truth["pressure"].isna().to_numpy(), rig)
    baro_error = estimates["bb"].to_numpy(dtype=float) - baro_truth

    convergence: Dict[str, Optional[float]] = {
        "accel": convergence_time(
            t, np.linalg.norm(accel_error, axis=1), np.linalg.norm(accel_truth, axis=1)
        ),
        "baro": convergence_time(t, baro_error, baro_truth),
    }
    velocity_error = None
    if velocity_bias_z is not None:
        bw = estimates["bw_z"].to_numpy(dtype=float) - velocity_bias_z
        velocity_error = float(bw[-1])
        convergence["velocity_z"] = convergence_time(t, bw, np.full(len(t), velocity_bias_z))
    return BiasErrors(
        accel_m_s2=_axes(accel_error[-1]),
        velocity_z_m_s=velocity_error,
        baro_m=float(baro_error[-1]),
        convergence_time_s=convergence,
    )


def compute_metrics(
    estimates: pd.DataFrame,
    truth: Optional[pd.DataFrame] = None,
    rig: Optional[SensorRig] = None,
    velocity_bias_z: Optional[float] = None,
) -> OdometryMetrics:
    """
    Drift, RMSE, bias and status metrics of an estimates table.

    Without ground truth only the z drift against the barometer is reported.

    Raises:
        TimestampMismatchError: Estimates and dataset are not on the same ticks
    """
    t = estimates["t"].to_numpy(dtype=float)
    position = estimates[POSITION_COLUMNS].to_numpy(dtype=float)
    metrics = OdometryMetrics(duration_s=float(t[-1] - t[0]))

    if "h" in estimates.columns:
        h = estimates["h"].to_numpy(dtype=float)
        baro_rows = np.flatnonzero(~np.isnan(h))
        if len(baro_rows):
            last = int(baro_rows[-1])
            metrics.baro_drift_z_m = float(position[last, 2] - h[last])

    if truth is None or not has_truth(truth):
        logger.info("No ground truth; reporting barometric z drift only")
        return metrics

    _check_timestamps(estimates, truth)
    true_position = truth[GT_POSITION_COLUMNS].to_numpy(dtype=float)
    error = position - true_position
    metrics.drift_m = float(np.linalg.norm(error[-1]))
    metrics.drift_axis_m = _axes(np.abs(error[-1]))
    metrics.position_rmse_m = _rmse(error)
    metrics.velocity_rmse_m_s = _rmse(
        estimates[VELOCITY_COLUMNS].to_numpy(dtype=float) - truth[GT_VELOCITY_COLUMNS].to_numpy(dtype=float)
    )
    dr_columns = [f"dr_p{a}" for a in _AXES]
    if all(c in estimates.columns for c in dr_columns):
        dr_error = estimates[dr_columns].to_numpy(dtype=float)[-1] - true_position[-1]
        metrics.dead_reckoning_drift_m = float(np.linalg.norm(dr_error))
    metrics.status = transition_timing(t, estimates["status"].to_numpy(), truth["status"].to_numpy())
    if rig is not None:
        metrics.biases = bias_errors(estimates, truth, rig, velocity_bias_z)
    return metrics


def write_metrics(metrics: OdometryMetrics, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics.json(indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_metrics(path: PathLike) -> OdometryMetrics:
    try:
        return OdometryMetrics.parse_obj(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot read metrics {path}: {e}", {"path": str(path)})


def write_figure_csvs(
    estimates: pd.DataFrame,
    truth: Optional[pd.DataFrame],
    out_dir: PathLike,
    rig: Optional[SensorRig] = None,
) -> List[Path]:
    """
    Plot-ready tables: velocity prediction, acceleration prediction, position
    and bias estimates, each next to the truth when it is known.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with_truth = truth is not None and has_truth(truth)
    t = estimates["t"]
    tables: Dict[str, pd.DataFrame] = {}

    velocity = pd.DataFrame({"t": t})
    acceleration = pd.DataFrame({"t": t})
    position = pd.DataFrame({"t": t})
    bias = pd.DataFrame({"t": t})
    body_truth = body_velocity_targets(truth) if with_truth else None
    for j, a in enumerate(_AXES):
        if f"vw_{a}" in estimates.columns:
            velocity[f"pred_v{a}"] = estimates[f"vw_{a}"]
        if f"ap_{a}" in estimates.columns:
            acceleration[f"pred_a{a}"] = estimates[f"ap_{a}"]
        position[f"est_p{a}"] = estimates[f"p{a}"]
        for prefix, label in (("nn_p", "network_p"), ("dr_p", "dead_reckoning_p")):
            if f"{prefix}{a}" in estimates.columns:
                position[f"{label}{a}"] = estimates[f"{prefix}{a}"]
        bias[f"est_ba_{a}"] = estimates[f"ba_{a}"]
        if with_truth:
            velocity[f"true_v{a}"] = body_truth[:, j]
            acceleration[f"true_a{a}"] = truth[GT_ACCEL_COLUMNS[j]].to_numpy()
            position[f"true_p{a}"] = truth[GT_POSITION_COLUMNS[j]].to_numpy()
    bias["est_bw_z"] = estimates["bw_z"]
    bias["est_bb"] = estimates["bb"]
    if with_truth and rig is not None:
        rotations = rotations_from_quaternions(truth[GT_QUATERNION_COLUMNS].to_numpy(dtype=float))
        accel_truth = rotations @ np.asarray(rig.accel_bias, dtype=float)
        for j, a in enumerate(_AXES):
            bias[f"true_ba_{a}"] = accel_truth[:, j]
        bias["true_bb"] = baro_bias_truth(
            estimates["t"].to_numpy(dtype=float), ~truth["pressure"].isna().to_numpy(), rig
        )

    tables["fig_velocity.csv"] = velocity
    tables["fig_acceleration.csv"] = acceleration
    tables["fig_position.csv"] = position
    tables["fig_bias.csv"] = bias
    paths = []
    for name, table in tables.items():
        path = out_dir / name
        table.to_csv(path, index=False, float_format="%.17g", na_rep="", lineterminator="\n")
        paths.append(path)
    logger.info(f"Wrote {len(paths)} figure tables to {out_dir}")
    return paths
