"""
Ground and in-air odometry observers with accelerometer, velocity-estimator
and barometer bias states, plus status debouncing.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
from pydantic import root_validator, validator

from .geometry import GRAVITY, K0, Rotation, Vec3
from .models import FlightStatus, NumericalError, StrictModel

logger = logging.getLogger(__name__)

_E = [1.0, 1.0, 1.0]
_F = [0.0, 0.0, 1.0]


class GainConfig(StrictModel):
    """Observer gains; each k is the diagonal of a 3x3 gain matrix."""
    k0: List[float] = [0.001 * e for e in _E]   # 1/s^2, ground accel-bias gain
    k1: List[float] = [0.9 * e for e in _E]     # 1/s, ground velocity damping
    k2: List[float] = [0.01 * f for f in _F]    # 1/s, baro position gain
    k3: List[float] = [0.01 * e for e in _E]    # 1/s, velocity-estimator gain
    k4: List[float] = [0.001 * e for e in _E]   # 1/s^2, accel bias from velocity error
    k5: List[float] = [0.005 * f for f in _F]   # 1/s^2, accel bias from baro error
    k6: List[float] = [0.005 * f for f in _F]   # 1/s, velocity-estimator bias gain
    alpha: float = 0.0                          # weight of the accelerometer vs the acceleration net
    beta: float = 0.4                           # baro-bias rate gain
    baro_scale: float = 2.0                     # baro correction multiplier on baro ticks
    status_on_threshold: float = 0.8            # P(in air) to switch to air
    status_off_threshold: float = 0.2           # P(in air) to switch to ground
    status_dwell_s: float = 0.1                 # s the threshold must hold

    @validator("k0", "k1", "k2", "k3", "k4", "k5", "k6")
    def validate_diagonal(cls, v: List[float]) -> List[float]:
        """Three nonnegative diagonal entries."""
        if len(v) != 3 or any(x < 0 for x in v):
            raise ValueError("gain must be three nonnegative diagonal entries")
        return v

    @validator("alpha")
    def validate_alpha(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        return v

    @validator("beta", "baro_scale", "status_dwell_s")
    def validate_nonnegative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be nonnegative")
        return v

    @root_validator(skip_on_failure=True)
    def validate_thresholds(cls, values: Dict) -> Dict:
        """0 < off < on < 1."""
        if not 0.0 < values["status_off_threshold"] < values["status_on_threshold"] < 1.0:
            raise ValueError("status thresholds must satisfy 0 < off < on < 1")
        return values

    def matrix(self, name: str) -> np.ndarray:
        """Diagonal entries of gain `name` as an array."""
        return np.asarray(getattr(self, name), dtype=float)


@dataclass(frozen=True)
class FusionState:
    """Observer state; every vector, the velocity-estimator bias included, is inertial NED."""
    position: Vec3 = field(default_factory=lambda: np.zeros(3))
    velocity: Vec3 = field(default_factory=lambda: np.zeros(3))
    acceleration: Vec3 = field(default_factory=lambda: np.zeros(3))
    accel_bias: Vec3 = field(default_factory=lambda: np.zeros(3))
    velocity_bias: Vec3 = field(default_factory=lambda: np.zeros(3))
    baro_bias: float = 0.0
    baro_bias_rate: float = 0.0

    def check_finite(self) -> "FusionState":
        values = np.concatenate((
            self.position, self.velocity, self.acceleration, self.accel_bias, self.velocity_bias,
            [self.baro_bias, self.baro_bias_rate],
        ))
        if not np.all(np.isfinite(values)):
            raise NumericalError("Observer state became non-finite", {"state": values.tolist()})
        return self


@dataclass(frozen=True)
class MeasurementBundle:
    """Inputs available at one base-grid tick; None marks a missing sample."""
    t: float
    accel: Optional[Vec3] = None
    rotation: Optional[Rotation] = None
    v_w: Optional[Vec3] = None
    a_p: Optional[Vec3] = None
    h: Optional[float] = None
    status: FlightStatus = FlightStatus.ON_GROUND


def inertial_acceleration(s: FusionState, m: MeasurementBundle) -> Optional[Vec3]:
    """g k0 + R a_m - b_a, or None without accelerometer or attitude."""
    if m.accel is None or m.rotation is None:
        return None
    return GRAVITY * K0 + m.rotation @ m.accel - s.accel_bias


def ground_step(s: FusionState, m: MeasurementBundle, gains: GainConfig, dt: float) -> FusionState:
    """
    On-ground observer step.

    V' = V + (A - k1 V) dt, b_a' = b_a + k0 V dt, P' = P + V dt; baro bias
    states are frozen. Without accelerometer or attitude the previous A is held.
    """
    a = inertial_acceleration(s, m)
    if a is None:
        a = s.acceleration
    return replace(
        s,
        position=s.position + s.velocity * dt,
        velocity=s.velocity + (a - gains.matrix("k1") * s.velocity) * dt,
        acceleration=a,
        accel_bias=s.accel_bias + gains.matrix("k0") * s.velocity * dt,
    )


def velocity_error(s: FusionState, m: MeasurementBundle) -> Optional[Vec3]:
    """e_v = V - R v_w + b_w."""
    if m.v_w is None or m.rotation is None:
        return None
    return s.velocity - m.rotation @ m.v_w + s.velocity_bias


def position_error(s: FusionState, m: MeasurementBundle) -> Optional[Vec3]:
    """e_p = P - h k0 + b_b k0."""
    if m.h is None:
        return None
    return s.position - m.h * K0 + s.baro_bias * K0


def air_step(s: FusionState, m: MeasurementBundle, gains: GainConfig, dt: float) -> FusionState:
    """
    In-air observer step.

    Velocity-error terms are skipped on ticks without v_w; barometer terms
    run only on baro ticks, scaled by baro_scale. Without a_p the
    accelerometer path is used alone for that tick.
    """
    e_v = velocity_error(s, m)
    e_p = position_error(s, m)
    if e_v is None:
        e_v = np.zeros(3)
    if e_p is None:
        e_p = np.zeros(3)
        scale = 0.0
    else:
        scale = gains.baro_scale

    inertial = inertial_acceleration(s, m)
    if m.a_p is None:
        a = s.acceleration if inertial is None else inertial
    elif inertial is None or gains.alpha == 0.0:
        a = np.asarray(m.a_p, dtype=float)
    else:
        a = gains.alpha * inertial + (1.0 - gains.alpha) * np.asarray(m.a_p, dtype=float)

    k2, k3, k4, k5, k6 = (gains.matrix(k) for k in ("k2", "k3", "k4", "k5", "k6"))
    baro_term = k5 * e_p * scale
    return replace(
        s,
        position=s.position + (s.velocity - k2 * e_p * scale) * dt,
        velocity=s.velocity + (a - k3 * e_v) * dt,
        acceleration=np.asarray(a, dtype=float),
        accel_bias=s.accel_bias + (k4 * e_v + baro_term) * dt,
        velocity_bias=s.velocity_bias - k6 * e_v * dt,
        baro_bias=s.baro_bias + s.baro_bias_rate * dt,
        baro_bias_rate=s.baro_bias_rate - gains.beta * float(baro_term[2]) * dt,
    )


def on_takeoff(s: FusionState, h: Optional[float]) -> FusionState:
    """Start the baro bias at h - P_z with zero rate."""
    if h is None:
        return replace(s, baro_bias_rate=0.0)
    return replace(s, baro_bias=float(h - s.position[2]), baro_bias_rate=0.0)


class StatusDebouncer:
    """Switch status only after the probability stays past a threshold for the dwell time."""

    def __init__(
        self,
        on_threshold: float = 0.8,
        off_threshold: float = 0.2,
        dwell_s: float = 0.1,
        initial: FlightStatus = FlightStatus.ON_GROUND,
    ):
        self.on_threshold = on_threshold
        self.off_threshold = off_threshold
        self.dwell_s = dwell_s
        self.status = FlightStatus(initial)
        self._since: Optional[float] = None

    @classmethod
    def from_gains(cls, gains: GainConfig) -> "StatusDebouncer":
        return cls(gains.status_on_threshold, gains.status_off_threshold, gains.status_dwell_s)

    def update(self, t: float, p_air: float) -> FlightStatus:
        if self.status == FlightStatus.ON_GROUND:
            pending = p_air > self.on_threshold
        else:
            pending = p_air < self.off_threshold
        if not pending:
            self._since = None
            return self.status
        if self._since is None:
            self._since = t
        if t - self._since >= self.dwell_s - 1e-9:
            self.status = FlightStatus.IN_AIR if self.status == FlightStatus.ON_GROUND else FlightStatus.ON_GROUND
            self._since = None
            logger.debug(f"Status switched to {self.status.name} at t={t:.3f}s")
        return self.status


def status_with_hysteresis(
    t: np.ndarray,
    p_air: np.ndarray,
    on_threshold: float = 0.8,
    off_threshold: float = 0.2,
    dwell_s: float = 0.1,
) -> np.ndarray:
    """Debounced status stream (0 ground, 1 air) for a probability stream."""
    debouncer = StatusDebouncer(on_threshold, off_threshold, dwell_s)
    return np.array([int(debouncer.update(float(ti), float(pi))) for ti, pi in zip(t, p_air)], dtype=int)


class FusionObserver:
    """Status-switched observer; re-anchors the baro bias at every takeoff."""

    def __init__(self, gains: GainConfig, initial: Optional[FusionState] = None):
        self.gains = gains
        self.state = initial or FusionState()
        self.status = FlightStatus.ON_GROUND
        self.last_h: Optional[float] = None

    def step(self, m: MeasurementBundle, dt: float) -> FusionState:
        if m.h is not None:
            self.last_h = m.h
        if m.status == FlightStatus.IN_AIR and self.status == FlightStatus.ON_GROUND:
            self.state = on_takeoff(self.state, self.last_h)
            logger.info(f"Takeoff detected at t={m.t:.3f}s, baro bias {self.state.baro_bias:.3f} m")
        elif m.status == FlightStatus.ON_GROUND and self.status == FlightStatus.IN_AIR:
            logger.info(f"Landing detected at t={m.t:.3f}s")
        self.status = m.status
        if m.status == FlightStatus.IN_AIR:
            self.state = air_step(self.state, m, self.gains, dt)
        else:
            self.state = ground_step(self.state, m, self.gains, dt)
        return self.state.check_finite()
