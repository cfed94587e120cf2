"""
End-to-end airflow-inertial odometry over one flight log.

Each base-grid tick runs the attitude observer, takes the held network
outputs, debounces the status and advances the ground or air observer.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .estimators import (
    AtmosphereParams,
    AttitudeGains,
    AttitudeObserver,
    AttitudeState,
    initial_attitude_from_accel,
    pressure_to_altitude,
)
from .fusion import FusionObserver, FusionState, GainConfig, MeasurementBundle, status_with_hysteresis
from .geometry import GRAVITY, K0, quaternion_from_rotation
from .models import (
    ACCEL_COLUMNS,
    ANEMOMETER_COLUMNS,
    ESC_COLUMNS,
    GT_ACCEL_COLUMNS,
    GYRO_COLUMNS,
    MAG_COLUMNS,
    ConfigurationError,
    DataError,
    FlightStatus,
    NetworkKind,
)
from .network import NetworkSpec, Weights, network_forward, predict, validate_weights
from .training import (
    STATUS_BARO_CHANNEL,
    body_velocity_targets,
    filled,
    has_truth,
    make_windows,
    status_features,
    velocity_features,
)

logger = logging.getLogger(__name__)

NetworkSet = Dict[NetworkKind, Tuple[NetworkSpec, Weights]]

BARO_REFERENCE_S = 1.0
_VEC = ("x", "y", "z")


@dataclass
class OdometryResult:
    """Per-tick estimates of one run, plus the baselines used for drift comparisons."""
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    accel_bias: np.ndarray
    velocity_bias: np.ndarray
    baro_bias: np.ndarray
    baro_bias_rate: np.ndarray
    status: np.ndarray
    p_air: np.ndarray
    rotation: np.ndarray
    v_w: np.ndarray                  # body-frame velocity input, NaN where unavailable
    a_p: np.ndarray                  # inertial acceleration input, NaN where unavailable
    h: np.ndarray                    # barometric position along k0, NaN off baro ticks
    dead_reckoning: np.ndarray       # accelerometer-only position
    network_position: np.ndarray     # integral of R v_w
    meta: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def to_frame(self) -> pd.DataFrame:
        """Estimates table in the column order written to disk."""
        frame = pd.DataFrame({"t": self.t})
        blocks = [
            ("p", self.position), ("v", self.velocity), ("a", self.acceleration),
            ("ba_", self.accel_bias), ("bw_", self.velocity_bias),
        ]
        for prefix, values in blocks:
            for j, axis in enumerate(_VEC):
                frame[f"{prefix}{axis}"] = values[:, j]
        frame["bb"] = self.baro_bias
        frame["bb_rate"] = self.baro_bias_rate
        frame["status"] = self.status.astype(int)
        frame["p_air"] = self.p_air
        frame["h"] = self.h
        quats = np.array([quaternion_from_rotation(r) for r in self.rotation])
        for j, name in enumerate(("qw", "qx", "qy", "qz")):
            frame[name] = quats[:, j]
        for prefix, values in (("vw_", self.v_w), ("ap_", self.a_p), ("dr_p", self.dead_reckoning),
                               ("nn_p", self.network_position)):
            for j, axis in enumerate(_VEC):
                frame[f"{prefix}{axis}"] = values[:, j]
        return frame


def baro_position(
    frame: pd.DataFrame,
    atmosphere: Optional[AtmosphereParams] = None,
    reference_s: float = BARO_REFERENCE_S,
) -> np.ndarray:
    """
    Barometric position along NED down, relative to the mean altitude of the
    first reference_s of baro samples. NaN on ticks without a pressure sample.
    """
    t = frame["t"].to_numpy(dtype=float)
    pressure = frame["pressure"].to_numpy(dtype=float)
    present = ~np.isnan(pressure)
    if not present.any():
        raise DataError("Dataset has no barometer samples")
    altitude = np.full(len(t), np.nan)
    altitude[present] = pressure_to_altitude(pressure[present], atmosphere)
    first = t[present][0]
    reference = altitude[present & (t - first < reference_s)]
    return -(altitude - float(np.mean(reference)))


def inference_ticks(n: int, window: int, stride: int) -> np.ndarray:
    """Ticks at which a network is evaluated on the causal window ending there."""
    return np.arange(window - 1, n, stride)


def held_predictions(
    spec: NetworkSpec,
    weights: Weights,
    features: np.ndarray,
    stride: int,
    relative_channels: Sequence[int] = (),
) -> np.ndarray:
    """
    Evaluate a network every stride ticks and hold each output until the next
    evaluation; rows before the first full window are NaN.
    """
    n = len(features)
    out = np.full((n, spec.output_units), np.nan)
    if n < spec.window_samples:
        logger.warning(f"Session shorter than the {spec.kind.value} window; no predictions")
        return out
    windows = make_windows(features, np.zeros(n), spec.window_samples, stride, relative_channels)
    out[windows.end_index] = predict(spec, weights, windows.x)
    return pd.DataFrame(out).ffill().to_numpy()


def _row(values: np.ndarray, i: int) -> Optional[np.ndarray]:
    row = values[i]
    return None if np.isnan(row).any() else row


def _network(networks: NetworkSet, kind: NetworkKind) -> Optional[Tuple[NetworkSpec, Weights]]:
    entry = networks.get(kind)
    if entry is not None:
        validate_weights(*entry)
    return entry


def run_odometry(
    frame: pd.DataFrame,
    networks: Optional[NetworkSet] = None,
    gains: Optional[GainConfig] = None,
    attitude_gains: Optional[AttitudeGains] = None,
    oracle: bool = False,
    inference_stride: int = 8,
    feature_boxcar: int = 20,
    atmosphere: Optional[AtmosphereParams] = None,
) -> OdometryResult:
    """
    Stream a flight log through attitude estimation, the networks, status
    debouncing and the status-switched observer.

    Args:
        frame: Flight log as returned by read_dataset
        networks: Trained networks by kind; ignored in oracle mode
        gains: Observer gains
        attitude_gains: Attitude observer gains
        oracle: Substitute ground truth for v_w, a_p and the status
        inference_stride: Base ticks between network evaluations
        feature_boxcar: Boxcar length of the status features
        atmosphere: Reference atmosphere for the barometer

    Raises:
        DataError: Oracle mode without ground-truth columns
        ConfigurationError: No status network outside oracle mode
    """
    gains = gains or GainConfig()
    attitude_gains = attitude_gains or AttitudeGains()
    networks = networks or {}
    t = frame["t"].to_numpy(dtype=float)
    n = len(t)
    if n < 2:
        raise DataError("Dataset needs at least two rows", {"rows": n})

    accel = frame[ACCEL_COLUMNS].to_numpy(dtype=float)
    gyro = frame[GYRO_COLUMNS].to_numpy(dtype=float)
    mag = frame[MAG_COLUMNS].to_numpy(dtype=float)
    h = baro_position(frame, atmosphere)

    acceleration_net = None
    if oracle:
        if not has_truth(frame):
            raise DataError("Oracle mode needs ground-truth columns")
        v_w = body_velocity_targets(frame)
        a_p = frame[GT_ACCEL_COLUMNS].to_numpy(dtype=float)
        status = frame["status"].to_numpy().astype(int)
        p_air = status.astype(float)
        logger.info("Running odometry in oracle mode")
    else:
        status_net = _network(networks, NetworkKind.STATUS)
        if status_net is None:
            raise ConfigurationError("A status network is required unless oracle mode is used")
        probabilities = held_predictions(
            *status_net,
            status_features(frame, feature_boxcar, atmosphere),
            inference_stride,
            relative_channels=(STATUS_BARO_CHANNEL,),
        )
        p_air = np.nan_to_num(probabilities[:, int(FlightStatus.IN_AIR)], nan=0.0)
        status = status_with_hysteresis(
            t, p_air, gains.status_on_threshold, gains.status_off_threshold, gains.status_dwell_s
        )
        velocity_net = _network(networks, NetworkKind.VELOCITY)
        if velocity_net is None:
            logger.warning("No velocity network; velocity corrections are skipped")
            v_w = np.full((n, 3), np.nan)
        else:
            v_w = held_predictions(*velocity_net, velocity_features(frame), inference_stride)
        acceleration_net = _network(networks, NetworkKind.ACCELERATION)
        a_p = np.full((n, 3), np.nan)
        if acceleration_net is None and gains.alpha < 1.0:
            logger.warning("No acceleration network; falling back to the accelerometer path")

    if acceleration_net is not None:
        acc_spec, acc_weights = acceleration_net
        acc_window = acc_spec.window_samples
        airflow_esc = filled(frame, ANEMOMETER_COLUMNS + ESC_COLUMNS)
        battery = filled(frame, ["voltage", "current"])
        quat_vec = np.zeros((n, 3))
        acc_ticks = set(inference_ticks(n, acc_window, inference_stride).tolist())

    startup = t - t[0] < max(attitude_gains.startup_s, 1e-9)
    rotation0 = initial_attitude_from_accel(np.nanmean(accel[startup], axis=0))
    attitude = AttitudeObserver(attitude_gains, AttitudeState(rotation0, np.zeros(3)), t_start=float(t[0]))
    baro_ticks = np.flatnonzero(~np.isnan(h))
    p0 = np.array([0.0, 0.0, h[baro_ticks[0]]])
    observer = FusionObserver(gains, FusionState(position=p0))

    out = {name: np.zeros((n, 3)) for name in ("position", "velocity", "acceleration", "accel_bias",
                                               "velocity_bias", "dead_reckoning", "network_position")}
    baro_bias = np.zeros(n)
    baro_bias_rate = np.zeros(n)
    rotations = np.empty((n, 3, 3))
    rotations[0] = rotation0
    out["position"][0] = p0
    out["dead_reckoning"][0] = p0
    out["network_position"][0] = p0
    dr_velocity = np.zeros(3)
    dr_accel = np.zeros(3)
    if acceleration_net is not None:
        quat_vec[0] = quaternion_from_rotation(rotation0)[1:]

    for i in range(1, n):
        dt = float(t[i] - t[i - 1])
        a_m = _row(accel, i)
        # The observer's own accelerometer path would cancel the gravity innovation.
        vdot_hat = _row(a_p, i - 1) if status[i] == FlightStatus.IN_AIR else None
        rotation = attitude.update(float(t[i]), dt, a_m, _row(gyro, i), _row(mag, i), vdot_hat).rotation
        rotations[i] = rotation

        if acceleration_net is not None:
            quat_vec[i] = quaternion_from_rotation(rotation)[1:]
            if i in acc_ticks:
                lo = i - acc_window + 1
                x = np.column_stack((airflow_esc[lo:i + 1], quat_vec[lo:i + 1], battery[lo:i + 1]))
                a_p[i] = network_forward(acc_spec, acc_weights, x[None])[0]
            elif not np.isnan(a_p[i - 1, 0]):
                a_p[i] = a_p[i - 1]

        bundle = MeasurementBundle(
            t=float(t[i]),
            accel=a_m,
            rotation=rotation,
            v_w=_row(v_w, i),
            a_p=_row(a_p, i),
            h=None if np.isnan(h[i]) else float(h[i]),
            status=FlightStatus(int(status[i])),
        )
        state = observer.step(bundle, dt)
        out["position"][i] = state.position
        out["velocity"][i] = state.velocity
        out["acceleration"][i] = state.acceleration
        out["accel_bias"][i] = state.accel_bias
        out["velocity_bias"][i] = state.velocity_bias
        baro_bias[i] = state.baro_bias
        baro_bias_rate[i] = state.baro_bias_rate

        if a_m is not None:
            dr_accel = GRAVITY * K0 + rotation @ a_m
        out["dead_reckoning"][i] = out["dead_reckoning"][i - 1] + dr_velocity * dt
        dr_velocity = dr_velocity + dr_accel * dt
        step = np.zeros(3) if bundle.v_w is None else rotation @ bundle.v_w
        out["network_position"][i] = out["network_position"][i - 1] + step * dt

    logger.info(
        f"Odometry over {n} ticks ({t[-1] - t[0]:.1f} s): final position "
        f"[{out['position'][-1][0]:.3f}, {out['position'][-1][1]:.3f}, {out['position'][-1][2]:.3f}] m"
    )
    return OdometryResult(
        t=t,
        position=out["position"],
        velocity=out["velocity"],
        acceleration=out["acceleration"],
        accel_bias=out["accel_bias"],
        velocity_bias=out["velocity_bias"],
        baro_bias=baro_bias,
        baro_bias_rate=baro_bias_rate,
        status=np.asarray(status, dtype=int),
        p_air=np.asarray(p_air, dtype=float),
        rotation=rotations,
        v_w=v_w,
        a_p=a_p,
        h=h,
        dead_reckoning=out["dead_reckoning"],
        network_position=out["network_position"],
        meta={"oracle": str(oracle), "inference_stride": str(inference_stride)},
    )
