"""
Analytic estimators: lever-arm air velocity, attitude observer with gyro-bias
estimation, and barometric altitude.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, NamedTuple, Optional, Union

import numpy as np
from pydantic import validator

from .geometry import (
    GRAVITY,
    K0,
    Rotation,
    Vec3,
    integrate_rotation,
    is_rotation,
    rotation_from_euler,
)
from .models import ConfigurationError, DomainError, StrictModel

if TYPE_CHECKING:
    from .simulator import SensorRig

logger = logging.getLogger(__name__)

# Unit Earth field direction in NED with 60 degrees inclination.
DEFAULT_EARTH_FIELD = [0.5, 0.0, float(np.sqrt(3.0) / 2.0)]

ArrayLike = Union[float, np.ndarray]


class AtmosphereParams(StrictModel):
    """Reference level and constants of the lapse-rate pressure-altitude model."""
    h1: float = 0.0            # m
    T1: float = 288.15         # K
    P1: float = 101325.0       # Pa
    R_gas: float = 8.31432     # N m / (mol K)
    L: float = -0.0065         # K / m
    M: float = 0.0289644       # kg / mol
    g: float = GRAVITY         # m / s^2

    @validator("P1", "T1")
    def validate_positive(cls, v: float) -> float:
        """Reference pressure and temperature must be positive."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("L")
    def validate_lapse_rate(cls, v: float) -> float:
        """A zero lapse rate makes the model singular."""
        if v == 0:
            raise ValueError("lapse rate must be non-zero")
        return v

    @property
    def exponent(self) -> float:
        """-R L / (g M)."""
        return -self.R_gas * self.L / (self.g * self.M)


def pressure_to_altitude(pressure: ArrayLike, ref: Optional[AtmosphereParams] = None) -> ArrayLike:
    """
    Convert static pressure to altitude.

    Args:
        pressure: Pressure in Pa, scalar or array
        ref: Atmosphere reference level

    Returns:
        Altitude in meters, h1 + (T1/L) [(P/P1)^(-R L/(g M)) - 1]
    """
    ref = ref or AtmosphereParams()
    p = np.asarray(pressure, dtype=float)
    if np.any(~(p > 0)):
        raise DomainError("Pressure must be positive", {"min_pressure": float(np.nanmin(p)) if p.size else None})
    h = ref.h1 + (ref.T1 / ref.L) * ((p / ref.P1) ** ref.exponent - 1.0)
    return float(h) if np.ndim(h) == 0 else h


def altitude_from_pressure_inverse(altitude: ArrayLike, ref: Optional[AtmosphereParams] = None) -> ArrayLike:
    """Exact inverse of pressure_to_altitude: altitude in m to pressure in Pa."""
    ref = ref or AtmosphereParams()
    h = np.asarray(altitude, dtype=float)
    temperature = ref.T1 + ref.L * (h - ref.h1)
    if np.any(temperature <= 0):
        raise DomainError(
            "Altitude outside the lapse-rate validity bound",
            {"bound_m": ref.h1 - ref.T1 / ref.L},
        )
    p = ref.P1 * (temperature / ref.T1) ** (1.0 / ref.exponent)
    return float(p) if np.ndim(p) == 0 else p


def anemometer_vector(readings: np.ndarray, rig: "SensorRig") -> np.ndarray:
    """
    Collapse channel readings (..., n_channels) into sensor-frame vectors (..., 3).

    Least-squares projection on the channel axes; with the default rig this is
    [h1, h2, -mean(v1, v2)].
    """
    return np.asarray(readings, dtype=float) @ rig.collapse_matrix.T


def lever_arm_velocity(anemo_vec: np.ndarray, omega: np.ndarray, rig: "SensorRig") -> np.ndarray:
    """
    Body-frame air velocity from the sensor-frame anemometer vector.

    Works on single vectors or stacks of shape (n, 3): R0 anemo - omega x delta.
    """
    anemo_vec = np.asarray(anemo_vec, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return anemo_vec @ rig.r0.T - np.cross(omega, rig.delta_vec)


@dataclass(frozen=True)
class AttitudeState:
    """Attitude estimate and gyro-bias estimate."""
    rotation: Rotation
    gyro_bias: Vec3

    def __post_init__(self):
        if not is_rotation(self.rotation):
            raise ConfigurationError("Attitude estimate is not a rotation")


class AttitudeGains(StrictModel):
    """Observer gains; window is the boxcar length for the accel/mag means."""
    alpha8: float = 0.05        # 1/s, gyro-bias integral gain
    alpha9: float = 1.0         # 1/s, gravity-direction gain
    alpha10: float = 0.5        # 1/s, magnetic-field gain
    window: int = 20            # samples (50 ms at 400 Hz)
    startup_s: float = 1.0      # s, estimated acceleration ignored before this
    earth_field: List[float] = DEFAULT_EARTH_FIELD  # NED, only the direction matters

    @validator("alpha8", "alpha9", "alpha10", "startup_s")
    def validate_nonnegative(cls, v: float) -> float:
        """Gains are nonnegative."""
        if v < 0:
            raise ValueError("must be nonnegative")
        return v

    @validator("window")
    def validate_window(cls, v: int) -> int:
        """Window must hold at least one sample."""
        if v < 1:
            raise ValueError("window must be at least 1 sample")
        return v

    @validator("earth_field")
    def validate_earth_field(cls, v: List[float]) -> List[float]:
        """Earth field is a non-zero 3-vector."""
        if len(v) != 3 or np.linalg.norm(v) == 0:
            raise ValueError("earth_field must be a non-zero 3-vector")
        return v


class ImuSample(NamedTuple):
    """IMU inputs of one observer step; accel and mag are boxcar means."""
    accel: Vec3
    gyro: Vec3
    mag: Optional[Vec3] = None


def attitude_correction(
    rotation: Rotation,
    imu: ImuSample,
    vdot_hat: Vec3,
    gains: AttitudeGains,
) -> Vec3:
    """
    Correction vector gamma (the vex of the correction matrix).

    Gravity innovation is written predicted-minus-measured so that it pulls
    the same way as the magnetometer term.
    """
    u = rotation.T @ K0
    predicted = rotation.T @ (np.asarray(vdot_hat, dtype=float) - GRAVITY * K0)
    gamma = (gains.alpha9 / GRAVITY) * np.cross(u, predicted - imu.accel)
    if gains.alpha10 > 0 and imu.mag is not None:
        m = np.asarray(gains.earth_field, dtype=float)
        gamma = gamma + (gains.alpha10 / float(m @ m)) * np.cross(rotation.T @ m, imu.mag)
    return gamma


def attitude_step(
    state: AttitudeState,
    imu: ImuSample,
    vdot_hat: Vec3,
    gains: AttitudeGains,
    dt: float,
) -> AttitudeState:
    """
    Advance the attitude observer by dt.

    R' = R exp((skew(g_m - b_g) - gamma) dt), b_g' = b_g + alpha8 vex(gamma) dt.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive", {"dt": dt})
    gamma = attitude_correction(state.rotation, imu, vdot_hat, gains)
    rotation = integrate_rotation(state.rotation, imu.gyro - state.gyro_bias - gamma, dt)
    gyro_bias = state.gyro_bias + gains.alpha8 * gamma * dt
    return AttitudeState(rotation, gyro_bias)


def initial_attitude_from_accel(accel_mean: Vec3) -> Rotation:
    """Level the frame from a mean specific force at rest; yaw is set to zero."""
    a = np.asarray(accel_mean, dtype=float)
    norm = np.linalg.norm(a)
    if norm == 0:
        return np.eye(3)
    down = -a / norm
    roll = np.arctan2(down[1], down[2])
    pitch = np.arcsin(np.clip(-down[0], -1.0, 1.0))
    return rotation_from_euler(roll, pitch, 0.0)


class AttitudeObserver:
    """Streaming wrapper: keeps the boxcar windows and the startup gate."""

    def __init__(
        self,
        gains: AttitudeGains,
        initial: AttitudeState,
        t_start: float = 0.0,
    ):
        """
        Initialize the observer.

        Args:
            gains: Observer gains and window length
            initial: Starting attitude and bias estimate
            t_start: Timestamp of the first sample the observer will see
        """
        self.gains = gains
        self.state = initial
        self.t_start = t_start
        self._accel = deque(maxlen=gains.window)
        self._mag = deque(maxlen=gains.window)

    def update(
        self,
        t: float,
        dt: float,
        accel: Optional[Vec3],
        gyro: Optional[Vec3],
        mag: Optional[Vec3] = None,
        vdot_hat: Optional[Vec3] = None,
    ) -> AttitudeState:
        """Feed one IMU tick; a tick without gyro leaves the state unchanged."""
        if accel is not None:
            self._accel.append(np.asarray(accel, dtype=float))
        if mag is not None:
            self._mag.append(np.asarray(mag, dtype=float))
        if gyro is None or not self._accel:
            return self.state
        if vdot_hat is None or t - self.t_start < self.gains.startup_s:
            vdot_hat = np.zeros(3)
        imu = ImuSample(
            accel=np.mean(self._accel, axis=0),
            gyro=np.asarray(gyro, dtype=float),
            mag=np.mean(self._mag, axis=0) if self._mag else None,
        )
        self.state = attitude_step(self.state, imu, vdot_hat, self.gains, dt)
        return self.state


def run_attitude_observer(
    t: np.ndarray,
    accel: np.ndarray,
    gyro: np.ndarray,
    mag: Optional[np.ndarray],
    gains: AttitudeGains,
    vdot_hat: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Batch pass of the observer over a session.

    Returns the (n, 3, 3) rotation history; the first estimate comes from the
    first startup_s of accelerometer data.
    """
    n = len(t)
    startup = t - t[0] < max(gains.startup_s, 1e-9)
    init = initial_attitude_from_accel(np.nanmean(accel[startup], axis=0))
    observer = AttitudeObserver(gains, AttitudeState(init, np.zeros(3)), t_start=float(t[0]))
    out = np.empty((n, 3, 3))
    out[0] = init
    for i in range(1, n):
        observer.update(
            float(t[i]),
            float(t[i] - t[i - 1]),
            None if np.isnan(accel[i, 0]) else accel[i],
            None if np.isnan(gyro[i, 0]) else gyro[i],
            None if mag is None or np.isnan(mag[i, 0]) else mag[i],
            None if vdot_hat is None else vdot_hat[i],
        )
        out[i] = observer.state.rotation
    logger.debug(f"Attitude pass over {n} samples done")
    return out
