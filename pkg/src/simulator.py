"""
Synthetic flight generator.

Builds full ground -> takeoff -> air -> landing trajectories for a small
quadrotor and synthesizes every multirate sensor stream on the 400 Hz base
grid, including rotor downwash and ground-effect corruption.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, root_validator, validator
from scipy.interpolate import CubicSpline

from .estimators import DEFAULT_EARTH_FIELD, AtmosphereParams, altitude_from_pressure_inverse
from .geometry import GRAVITY, K0, Rotation, quaternion_from_rotation, rotation_from_euler
from .models import (
    ACCEL_COLUMNS,
    ALL_COLUMNS,
    ANEMOMETER_COLUMNS,
    ESC_COLUMNS,
    GT_ACCEL_COLUMNS,
    GT_POSITION_COLUMNS,
    GT_QUATERNION_COLUMNS,
    GT_VELOCITY_COLUMNS,
    GYRO_COLUMNS,
    MAG_COLUMNS,
    ConfigurationError,
    StrictModel,
)

logger = logging.getLogger(__name__)

BASE_RATE_HZ = 400

# PRNG stream ids; each sensor draws from its own (seed, id) stream.
STREAM_IDS = {
    "trajectory": 0,
    "accel": 1,
    "gyro": 2,
    "mag": 3,
    "anemometer": 4,
    "baro": 5,
    "esc": 6,
    "battery": 7,
}

# Rotor mixing rows (roll, pitch, yaw); every column sums to zero.
MIXER = np.array([
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [-1.0, -1.0, -1.0],
])
_MIXER_LIMIT = 0.25

ArrayLike = Union[float, np.ndarray]


class TrajectoryStyle(str, Enum):
    """Air-phase motion patterns."""
    HOVER = "hover"
    LISSAJOUS = "lissajous"
    RANDOM_SPLINE = "random-spline"


class NoiseMode(str, Enum):
    """Sensor noise models."""
    HOMOSCEDASTIC = "homoscedastic"
    SPEED_PROPORTIONAL = "speed-proportional"


class VehicleParams(StrictModel):
    """Rigid-body and rotor parameters of the simulated quadrotor."""
    mass: float = 0.5                     # kg
    rotor_time_constant: float = 0.03     # s
    rotor_radius: float = 0.0635          # m
    thrust_coefficient: float = 1.2e-6    # N / (rad/s)^2, per rotor
    drag_coefficient: float = 0.03        # kg / m
    air_density: float = 1.225            # kg / m^3
    max_rotor_speed: float = 2000.0       # rad/s, ESC full scale
    mixer_gain: float = 0.02              # s^2 / rad, rotor-speed split per unit angular acceleration

    @validator("*")
    def validate_positive(cls, v: float) -> float:
        """All vehicle parameters are strictly positive."""
        if v <= 0:
            raise ValueError("must be strictly positive")
        return v

    @property
    def weight(self) -> float:
        return self.mass * GRAVITY

    @property
    def rotor_area(self) -> float:
        return float(np.pi * self.rotor_radius ** 2)


class SensorRig(StrictModel):
    """Anemometer geometry plus noise and bias of every sensor."""
    r0_rpy_deg: List[float] = [0.0, 0.0, 0.0]     # deg, sensor -> body mounting
    delta: List[float] = [0.0, 0.0, -0.08]        # m, sensor center in body frame
    channel_axes: List[List[float]] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, -1.0],
    ]
    downwash_gains: List[float] = [0.05, 0.05, 1.0, 0.8]

    anemometer_noise_std: float = 0.05     # m/s
    accel_noise_std: float = 0.05          # m/s^2
    gyro_noise_std: float = 0.003          # rad/s
    mag_noise_std: float = 0.005           # unitless
    baro_noise_pa: float = 0.5             # Pa
    esc_noise_std: float = 0.003           # normalized
    voltage_noise_std: float = 0.01        # V
    current_noise_std: float = 0.05        # A
    noise_mode: NoiseMode = NoiseMode.HOMOSCEDASTIC
    speed_noise_gain: float = 0.2          # s/m, std multiplier slope in speed-proportional mode

    accel_bias: List[float] = [0.05, -0.03, 0.08]      # m/s^2, body frame
    gyro_bias: List[float] = [0.002, -0.001, 0.0015]   # rad/s
    mag_bias: List[float] = [0.0, 0.0, 0.0]            # unitless
    baro_bias_m: float = 0.3               # m, along NED down
    baro_bias_rate_m_s: float = 0.002      # m/s
    earth_field: List[float] = DEFAULT_EARTH_FIELD

    baro_ground_effect_pa: float = 3.0     # Pa at full ground effect and hover thrust
    battery_voltage_full: float = 12.6     # V
    battery_voltage_sag: float = 0.6       # V at hover thrust
    battery_current_idle: float = 0.3      # A with rotors armed
    battery_current_hover: float = 8.0     # A at hover thrust

    @validator("r0_rpy_deg", "delta", "accel_bias", "gyro_bias", "mag_bias", "earth_field")
    def validate_vec3(cls, v: List[float]) -> List[float]:
        """Vector fields have three finite components."""
        if len(v) != 3 or not np.all(np.isfinite(v)):
            raise ValueError("must be a finite 3-vector")
        return v

    @validator("channel_axes")
    def validate_channel_axes(cls, v: List[List[float]]) -> List[List[float]]:
        """Unit axes spanning 3-D with a vertical pair."""
        axes = np.asarray(v, dtype=float)
        if axes.shape != (len(ANEMOMETER_COLUMNS), 3):
            raise ValueError(f"channel_axes must be {len(ANEMOMETER_COLUMNS)} 3-vectors")
        if np.any(np.abs(np.linalg.norm(axes, axis=1) - 1.0) > 1e-6):
            raise ValueError("channel axes must have unit norm")
        if np.linalg.matrix_rank(axes) < 3:
            raise ValueError("channel axes must span three dimensions")
        if np.sum(np.abs(axes[:, 2]) > 1.0 - 1e-6) < 2:
            raise ValueError("channel axes need a vertical pair along sensor k")
        return v

    @validator("downwash_gains")
    def validate_downwash_gains(cls, v: List[float], values: Dict) -> List[float]:
        """One nonnegative gain per channel."""
        axes = values.get("channel_axes")
        if axes is not None and len(v) != len(axes):
            raise ValueError("downwash_gains needs one entry per channel")
        if any(g < 0 for g in v):
            raise ValueError("downwash gains must be nonnegative")
        return v

    @validator(
        "anemometer_noise_std", "accel_noise_std", "gyro_noise_std", "mag_noise_std", "baro_noise_pa",
        "esc_noise_std", "voltage_noise_std", "current_noise_std", "speed_noise_gain",
    )
    def validate_noise(cls, v: float) -> float:
        """Noise levels are nonnegative."""
        if v < 0:
            raise ValueError("noise std must be nonnegative")
        return v

    @property
    def r0(self) -> Rotation:
        return rotation_from_euler(*np.radians(self.r0_rpy_deg))

    @property
    def delta_vec(self) -> np.ndarray:
        return np.asarray(self.delta, dtype=float)

    @property
    def axes(self) -> np.ndarray:
        return np.asarray(self.channel_axes, dtype=float)

    @property
    def collapse_matrix(self) -> np.ndarray:
        """(3, n_channels) least-squares map from readings to the sensor-frame vector."""
        return np.linalg.pinv(self.axes)

    @property
    def vertical_channels(self) -> List[int]:
        return [i for i, a in enumerate(self.channel_axes) if abs(a[2]) > 1.0 - 1e-6]

    def baro_bias(self, t: ArrayLike) -> ArrayLike:
        """b_b(t) = b_b0 + rate * t."""
        return self.baro_bias_m + self.baro_bias_rate_m_s * np.asarray(t, dtype=float)


class ScenarioConfig(StrictModel):
    """One synthetic session: phases, motion style and sensor rates."""
    duration_s: float = 200.0             # s
    ground_dwell_pre_s: float = 5.0       # s on the ground before takeoff starts
    ground_dwell_post_s: float = 5.0      # s on the ground after touchdown
    transition_s: float = 3.0             # s, takeoff and landing duration
    spinup_s: float = 2.0                 # s, rotor spin-up / spin-down on the ground
    seed: int = 0
    style: TrajectoryStyle = TrajectoryStyle.LISSAJOUS
    hover_altitude_m: float = 1.5         # m
    amplitude_m: List[float] = [2.0, 2.0, 0.5]  # m, per-axis motion bound
    max_speed_m_s: float = 2.0            # m/s
    base_frequency_hz: float = 0.1        # Hz, lissajous base frequency
    knot_interval_s: float = 2.0          # s, random-spline knot spacing
    yaw_amplitude_deg: float = 30.0       # deg
    yaw_frequency_hz: float = 0.05        # Hz
    ground_epsilon_m: float = 0.01        # m

    anemometer_hz: int = 400
    imu_hz: int = 400
    baro_hz: int = 200
    battery_hz: int = 100
    esc_hz: int = 800

    @validator(
        "duration_s", "transition_s", "hover_altitude_m", "max_speed_m_s", "base_frequency_hz",
        "knot_interval_s", "ground_epsilon_m",
    )
    def validate_positive(cls, v: float) -> float:
        """Durations and bounds are positive."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("ground_dwell_pre_s", "ground_dwell_post_s", "spinup_s", "yaw_amplitude_deg", "yaw_frequency_hz")
    def validate_nonnegative(cls, v: float) -> float:
        """Dwell and yaw settings are nonnegative."""
        if v < 0:
            raise ValueError("must be nonnegative")
        return v

    @validator("amplitude_m")
    def validate_amplitude(cls, v: List[float]) -> List[float]:
        """Three nonnegative amplitudes."""
        if len(v) != 3 or any(a < 0 for a in v):
            raise ValueError("amplitude_m must be three nonnegative values")
        return v

    @validator("anemometer_hz", "imu_hz")
    def validate_base_rate(cls, v: int) -> int:
        """Anemometer and IMU define the base grid."""
        if v != BASE_RATE_HZ:
            raise ValueError(f"must be {BASE_RATE_HZ} Hz")
        return v

    @validator("baro_hz", "battery_hz")
    def validate_slow_rate(cls, v: int) -> int:
        """Slow streams must land on base-grid ticks."""
        if v <= 0 or BASE_RATE_HZ % v:
            raise ValueError(f"must divide {BASE_RATE_HZ} Hz")
        return v

    @validator("esc_hz")
    def validate_esc_rate(cls, v: int) -> int:
        """ESC stream is an integer multiple of the base rate."""
        if v <= 0 or v % BASE_RATE_HZ:
            raise ValueError(f"must be a multiple of {BASE_RATE_HZ} Hz")
        return v

    @root_validator(skip_on_failure=True)
    def validate_phases(cls, values: Dict) -> Dict:
        """The flight must fit between the ground dwells."""
        ground = values["ground_dwell_pre_s"] + values["ground_dwell_post_s"]
        if values["duration_s"] <= ground + 2.0 * values["transition_s"]:
            raise ValueError("duration must exceed both ground dwells plus takeoff and landing")
        if values["spinup_s"] > min(values["ground_dwell_pre_s"], values["ground_dwell_post_s"]):
            raise ValueError("spinup_s cannot exceed the ground dwells")
        if values["amplitude_m"][2] > 0.5 * values["hover_altitude_m"]:
            raise ValueError("vertical amplitude must stay below half the hover altitude")
        return values

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * BASE_RATE_HZ))

    @property
    def takeoff_start(self) -> float:
        return self.ground_dwell_pre_s

    @property
    def landing_end(self) -> float:
        return self.duration_s - self.ground_dwell_post_s


@dataclass
class TruthSeries:
    """Ground truth on the base grid; rotations are (n, 3, 3)."""
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    rotation: np.ndarray
    omega: np.ndarray
    rotor_speeds: np.ndarray
    rotor_commands: np.ndarray
    thrust: np.ndarray
    status: np.ndarray

    @property
    def altitude(self) -> np.ndarray:
        return -self.position[:, 2]

    def __len__(self) -> int:
        return len(self.t)


class ScenarioSummary(BaseModel):
    """What cmd_simulate reports per session."""
    rows: int
    duration_s: float
    distance_m: float
    takeoff_s: List[float]
    landing_s: List[float]


def sensor_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one sensor stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAM_IDS[name]]))


def rotor_lag_step(omega_rotor: ArrayLike, omega_cmd: ArrayLike, tau: float, dt: float) -> ArrayLike:
    """Exact first-order rotor response over dt."""
    if dt <= 0 or tau <= 0:
        raise ConfigurationError("dt and tau must be positive", {"dt": dt, "tau": tau})
    return omega_cmd + (np.asarray(omega_rotor) - omega_cmd) * np.exp(-dt / tau)


def induced_velocity(thrust_total: ArrayLike, params: VehicleParams) -> ArrayLike:
    """Momentum-theory downwash at the rotor plane, m/s."""
    per_rotor = np.maximum(np.asarray(thrust_total, dtype=float), 0.0) / 4.0
    v = np.sqrt(per_rotor / (2.0 * params.air_density * params.rotor_area))
    return float(v) if np.ndim(v) == 0 else v


def ground_effect_factor(altitude: ArrayLike, params: VehicleParams) -> ArrayLike:
    """Thrust amplification 1 / (1 - (r / 4z)^2), clamped to [1, 2]."""
    z = np.maximum(np.asarray(altitude, dtype=float), 0.0)
    with np.errstate(divide="ignore"):
        ratio_sq = np.where(z > 0, (params.rotor_radius / (4.0 * z)) ** 2, np.inf)
    factor = np.where(ratio_sq >= 0.5, 2.0, 1.0 / (1.0 - np.minimum(ratio_sq, 0.5)))
    return float(factor) if np.ndim(factor) == 0 else factor


def quad_accel_forward(
    v_a_body: np.ndarray,
    r: Rotation,
    rotor_speeds: np.ndarray,
    params: VehicleParams,
    altitude: float = np.inf,
) -> np.ndarray:
    """
    Inertial acceleration from thrust and aerodynamic drag.

    Thrust acts along body -k; drag is c_d |V_a| V_a in body frame.
    """
    v_a_body = np.asarray(v_a_body, dtype=float)
    thrust = ground_effect_factor(altitude, params) * params.thrust_coefficient * float(
        np.sum(np.square(rotor_speeds))
    )
    drag = params.drag_coefficient * np.linalg.norm(v_a_body) * v_a_body
    return GRAVITY * K0 - (r @ (np.array([0.0, 0.0, thrust]) + drag)) / params.mass


def _smoothstep(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Septic smoothstep and its first two derivatives; flat to third order at 0 and 1."""
    x = np.clip(x, 0.0, 1.0)
    s = x ** 4 * (35.0 - 84.0 * x + 70.0 * x ** 2 - 20.0 * x ** 3)
    ds = 140.0 * x ** 3 * (1.0 - x) ** 3
    dds = 420.0 * x ** 2 * (1.0 - x) ** 2 * (1.0 - 2.0 * x)
    return s, ds, dds


def _takeoff_window(t: np.ndarray, cfg: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """w(t) rising over takeoff, 1 in the air, falling over landing; with w', w''."""
    span = cfg.transition_s
    up, dup, ddup = _smoothstep((t - cfg.takeoff_start) / span)
    down, ddown, dddown = _smoothstep((cfg.landing_end - t) / span)
    w = up * down
    dw = dup / span * down - up * ddown / span
    ddw = ddup / span ** 2 * down - 2.0 * dup * ddown / span ** 2 + up * dddown / span ** 2
    return w, dw, ddw


def _air_path(t: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator):
    """Air-phase target Q(t) with analytic first and second derivatives."""
    n = len(t)
    hover = np.array([0.0, 0.0, -cfg.hover_altitude_m])
    q = np.tile(hover, (n, 1))
    dq = np.zeros((n, 3))
    ddq = np.zeros((n, 3))
    amplitude = np.asarray(cfg.amplitude_m, dtype=float)

    if cfg.style == TrajectoryStyle.LISSAJOUS:
        amp = amplitude * rng.uniform(0.5, 1.0, 3)
        omega = 2.0 * np.pi * cfg.base_frequency_hz * np.array([1.0, 1.5, 0.7])
        phase = rng.uniform(0.0, 2.0 * np.pi, 3)
        peak_speed = float(np.linalg.norm(amp * omega))
        if peak_speed > cfg.max_speed_m_s:
            amp = amp * cfg.max_speed_m_s / peak_speed
        arg = np.outer(t, omega) + phase
        q = q + amp * np.sin(arg)
        dq = amp * omega * np.cos(arg)
        ddq = -amp * omega ** 2 * np.sin(arg)
    elif cfg.style == TrajectoryStyle.RANDOM_SPLINE:
        start = cfg.takeoff_start
        knots = np.arange(start, cfg.landing_end + cfg.knot_interval_s, cfg.knot_interval_s)
        values = rng.uniform(-1.0, 1.0, (len(knots), 3)) * amplitude
        spline = CubicSpline(knots, values, axis=0, bc_type="clamped")
        grid = np.clip(t, knots[0], knots[-1])
        peak_speed = float(np.max(np.linalg.norm(spline(grid, 1), axis=1)))
        scale = min(1.0, cfg.max_speed_m_s / peak_speed) if peak_speed > 0 else 1.0
        q = q + scale * spline(grid)
        dq = scale * spline(grid, 1)
        ddq = scale * spline(grid, 2)
    return q, dq, ddq


def _attitude_from_force(force: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    """Rotations whose body k axis is along force, with the heading set by yaw."""
    b3 = force / np.linalg.norm(force, axis=1, keepdims=True)
    heading = np.column_stack((np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)))
    b2 = np.cross(b3, heading)
    b2 /= np.linalg.norm(b2, axis=1, keepdims=True)
    b1 = np.cross(b2, b3)
    return np.stack((b1, b2, b3), axis=2)


def _body_rates(rotation: np.ndarray, dt: float) -> np.ndarray:
    """Forward-difference body rates: exp(skew(omega_k dt)) maps R_k to R_k+1."""
    rel = np.einsum("nji,njk->nik", rotation[:-1], rotation[1:])
    cos_theta = np.clip((np.trace(rel, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    sin_theta = np.sin(theta)
    coef = np.where(theta < 1e-6, 0.5, theta / (2.0 * np.where(sin_theta == 0, 1.0, sin_theta)))
    phi = coef[:, None] * np.column_stack((
        rel[:, 2, 1] - rel[:, 1, 2],
        rel[:, 0, 2] - rel[:, 2, 0],
        rel[:, 1, 0] - rel[:, 0, 1],
    ))
    omega = np.empty((len(rotation), 3))
    omega[:-1] = phi / dt
    omega[-1] = omega[-2] if len(rotation) > 1 else 0.0
    return omega


def generate_trajectory(cfg: ScenarioConfig, vehicle: Optional[VehicleParams] = None) -> TruthSeries:
    """
    Build a ground-truth session on the 400 Hz grid.

    Position is w(t) Q(t): a smooth takeoff/landing window times the air-phase
    path, so P, V and A are exact analytic derivatives and the vehicle rests
    at the origin during both ground dwells.
    """
    vehicle = vehicle or VehicleParams()
    dt = 1.0 / BASE_RATE_HZ
    n = cfg.n_samples
    t = np.arange(n) / BASE_RATE_HZ
    rng = sensor_stream(cfg.seed, "trajectory")

    w, dw, ddw = _takeoff_window(t, cfg)
    q, dq, ddq = _air_path(t, cfg, rng)
    position = w[:, None] * q
    velocity = dw[:, None] * q + w[:, None] * dq
    acceleration = ddw[:, None] * q + 2.0 * dw[:, None] * dq + w[:, None] * ddq

    peak = float(np.max(np.linalg.norm(acceleration, axis=1)))
    if peak > 2.0 * GRAVITY:
        raise ConfigurationError(
            "Scenario demands more than 2g of acceleration",
            {"peak_acceleration": peak, "style": cfg.style.value},
        )

    yaw_phase = rng.uniform(0.0, 2.0 * np.pi)
    yaw = w * np.radians(cfg.yaw_amplitude_deg) * np.sin(2.0 * np.pi * cfg.yaw_frequency_hz * t + yaw_phase)
    speed = np.linalg.norm(velocity, axis=1)
    force = vehicle.mass * (GRAVITY * K0 - acceleration) - vehicle.drag_coefficient * speed[:, None] * velocity
    rotation = _attitude_from_force(force, yaw)
    omega = _body_rates(rotation, dt)

    altitude = -position[:, 2]
    airborne = w > 0
    ge = ground_effect_factor(altitude, vehicle)
    thrust = np.where(airborne, np.linalg.norm(force, axis=1), 0.0)
    mean_speed_sq = thrust / (4.0 * vehicle.thrust_coefficient * ge)

    # Rotors ramp linearly to the ground-hover speed before takeoff and back down after landing.
    ground_speed = np.sqrt(vehicle.weight / (4.0 * vehicle.thrust_coefficient * ground_effect_factor(0.0, vehicle)))
    spin_up = np.clip((t - (cfg.takeoff_start - cfg.spinup_s)) / max(cfg.spinup_s, dt), 0.0, 1.0)
    spin_down = np.clip((cfg.landing_end + cfg.spinup_s - t) / max(cfg.spinup_s, dt), 0.0, 1.0)
    ground_ramp = np.where(t < cfg.takeoff_start, spin_up, spin_down) * ground_speed
    mean_speed_sq = np.where(airborne, mean_speed_sq, ground_ramp ** 2)
    thrust = np.where(airborne, thrust, 4.0 * vehicle.thrust_coefficient * ge * mean_speed_sq)

    angular_accel = np.gradient(omega, dt, axis=0)
    split = np.clip(vehicle.mixer_gain * angular_accel, -_MIXER_LIMIT, _MIXER_LIMIT)
    rotor_speeds = np.sqrt(mean_speed_sq[:, None] * (1.0 + split @ MIXER.T))
    commands = rotor_speeds + vehicle.rotor_time_constant * np.gradient(rotor_speeds, dt, axis=0)
    rotor_commands = np.clip(commands / vehicle.max_rotor_speed, 0.0, 1.0)

    status = (altitude > cfg.ground_epsilon_m).astype(int)
    logger.info(
        f"Generated {cfg.style.value} trajectory: {n} samples, seed={cfg.seed}, "
        f"peak |A|={peak:.2f} m/s^2"
    )
    return TruthSeries(
        t=t,
        position=position,
        velocity=velocity,
        acceleration=acceleration,
        rotation=rotation,
        omega=omega,
        rotor_speeds=rotor_speeds,
        rotor_commands=rotor_commands,
        thrust=thrust,
        status=status,
    )


def _noise(rng: np.random.Generator, std: float, shape: Tuple[int, ...], scale: np.ndarray) -> np.ndarray:
    draw = rng.standard_normal(shape) * std
    return draw * scale.reshape((-1,) + (1,) * (len(shape) - 1))


def _decimate(values: np.ndarray, rate_hz: int) -> np.ndarray:
    """Blank every row that is not a tick of a rate_hz stream."""
    out = np.array(values, dtype=float)
    step = BASE_RATE_HZ // rate_hz
    mask = np.arange(len(out)) % step != 0
    out[mask] = np.nan
    return out


def anemometer_readings(
    truth: TruthSeries,
    rig: SensorRig,
    params: VehicleParams,
) -> np.ndarray:
    """Noise-free channel readings (n, n_channels), downwash included."""
    v_body = np.einsum("nji,nj->ni", truth.rotation, truth.velocity) + np.cross(truth.omega, rig.delta_vec)
    v_sensor = v_body @ rig.r0
    axes = rig.axes
    rotor_thrust = params.thrust_coefficient * np.sum(np.square(truth.rotor_speeds), axis=1)
    downwash = induced_velocity(rotor_thrust, params) * ground_effect_factor(truth.altitude, params)
    orientation = np.where(np.abs(axes[:, 2]) > 0.5, -np.sign(axes[:, 2]), 1.0)
    gains = np.asarray(rig.downwash_gains) * orientation
    return v_sensor @ axes.T + downwash[:, None] * gains


def synthesize_sensors(
    truth: TruthSeries,
    rig: SensorRig,
    params: VehicleParams,
    seed: int,
    scenario: Optional[ScenarioConfig] = None,
    atmosphere: Optional[AtmosphereParams] = None,
) -> pd.DataFrame:
    """
    Synthesize the multirate sensor log for a ground-truth series.

    Returns a frame with the flight-log columns; slow streams leave empty
    (NaN) cells on the ticks where they have no sample.
    """
    scenario = scenario or ScenarioConfig()
    atmosphere = atmosphere or AtmosphereParams()
    n = len(truth)
    r = truth.rotation
    speed = np.linalg.norm(truth.velocity, axis=1)
    if rig.noise_mode == NoiseMode.SPEED_PROPORTIONAL:
        scale = 1.0 + rig.speed_noise_gain * speed
    else:
        scale = np.ones(n)

    specific_force = np.einsum("nji,nj->ni", r, truth.acceleration - GRAVITY * K0)
    accel = specific_force + np.asarray(rig.accel_bias) + _noise(
        sensor_stream(seed, "accel"), rig.accel_noise_std, (n, 3), scale
    )
    gyro = truth.omega + np.asarray(rig.gyro_bias) + _noise(
        sensor_stream(seed, "gyro"), rig.gyro_noise_std, (n, 3), scale
    )
    mag = (
        np.einsum("nji,j->ni", r, np.asarray(rig.earth_field, dtype=float))
        + np.asarray(rig.mag_bias)
        + _noise(sensor_stream(seed, "mag"), rig.mag_noise_std, (n, 3), scale)
    )
    anemometer = anemometer_readings(truth, rig, params) + _noise(
        sensor_stream(seed, "anemometer"), rig.anemometer_noise_std, (n, rig.axes.shape[0]), scale
    )

    # Barometer: measured altitude carries the bias along NED down, plus a
    # static-pressure bump while the rotors push against the ground.
    measured_altitude = truth.altitude - rig.baro_bias(truth.t)
    ge = ground_effect_factor(truth.altitude, params)
    bump = rig.baro_ground_effect_pa * (ge - 1.0) * truth.thrust / params.weight
    pressure = (
        altitude_from_pressure_inverse(atmosphere.h1 + measured_altitude, atmosphere)
        + bump
        + _noise(sensor_stream(seed, "baro"), rig.baro_noise_pa, (n,), scale)
    )
    pressure = _decimate(pressure, scenario.baro_hz)

    # ESC commands sampled at esc_hz between grid ticks, then averaged onto the grid.
    esc_rng = sensor_stream(seed, "esc")
    ratio = scenario.esc_hz // BASE_RATE_HZ
    previous = np.vstack((truth.rotor_commands[:1], truth.rotor_commands[:-1]))
    esc = np.zeros((n, 4))
    for j in range(ratio):
        frac = j / ratio
        sub = (1.0 - frac) * truth.rotor_commands + frac * previous
        esc += np.clip(sub + esc_rng.standard_normal((n, 4)) * rig.esc_noise_std, 0.0, 1.0)
    esc /= ratio

    battery_rng = sensor_stream(seed, "battery")
    load = params.thrust_coefficient * np.sum(np.square(truth.rotor_speeds), axis=1) / params.weight
    armed = np.sum(truth.rotor_speeds, axis=1) > 0
    voltage = rig.battery_voltage_full - rig.battery_voltage_sag * load + battery_rng.standard_normal(n) * rig.voltage_noise_std
    current = (
        rig.battery_current_idle * armed
        + rig.battery_current_hover * load
        + battery_rng.standard_normal(n) * rig.current_noise_std
    )

    frame = pd.DataFrame({"t": truth.t})
    frame[ANEMOMETER_COLUMNS] = anemometer[:, :len(ANEMOMETER_COLUMNS)]
    frame[ACCEL_COLUMNS] = accel
    frame[GYRO_COLUMNS] = gyro
    frame[MAG_COLUMNS] = mag
    frame["pressure"] = pressure
    frame[ESC_COLUMNS] = esc
    frame["voltage"] = _decimate(voltage, scenario.battery_hz)
    frame["current"] = _decimate(current, scenario.battery_hz)
    frame[GT_POSITION_COLUMNS] = truth.position
    frame[GT_VELOCITY_COLUMNS] = truth.velocity
    frame[GT_ACCEL_COLUMNS] = truth.acceleration
    frame[GT_QUATERNION_COLUMNS] = np.array([quaternion_from_rotation(rot) for rot in r])
    frame["status"] = truth.status
    logger.debug(f"Synthesized {n} sensor rows with seed={seed}")
    return frame[ALL_COLUMNS]


def simulate_session(
    scenario: ScenarioConfig,
    vehicle: VehicleParams,
    rig: SensorRig,
    seed: Optional[int] = None,
) -> pd.DataFrame:
    """Generate one session; seed overrides the scenario seed for trajectory and sensors."""
    if seed is not None:
        scenario = scenario.copy(update={"seed": seed})
    truth = generate_trajectory(scenario, vehicle)
    return synthesize_sensors(truth, rig, vehicle, scenario.seed, scenario)


def scenario_summary(frame: pd.DataFrame) -> ScenarioSummary:
    """Duration, distance flown and transition times of a simulated session."""
    t = frame["t"].to_numpy()
    position = frame[GT_POSITION_COLUMNS].to_numpy()
    steps = np.linalg.norm(np.diff(position, axis=0), axis=1)
    status = frame["status"].to_numpy().astype(int)
    change = np.flatnonzero(np.diff(status)) + 1
    return ScenarioSummary(
        rows=len(frame),
        duration_s=float(t[-1] - t[0]) if len(t) else 0.0,
        distance_m=float(np.sum(steps)),
        takeoff_s=[float(t[i]) for i in change if status[i] == 1],
        landing_s=[float(t[i]) for i in change if status[i] == 0],
    )
