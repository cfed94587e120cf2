"""
Shared enums, report models and error handling for Aeolus.
"""
from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Extra, Field


class StrictModel(BaseModel):
    """Base for configuration sections: unknown keys are rejected."""

    class Config:
        """Pydantic config."""
        extra = Extra.forbid
        validate_assignment = True


class FrameTag(str, Enum):
    """Coordinate frames used throughout the pipeline."""
    INERTIAL_NED = "inertial-ned"
    BODY = "body"
    SENSOR = "sensor"


class FlightStatus(IntEnum):
    """Binary flight status; the integer value is the class index and CSV code."""
    ON_GROUND = 0
    IN_AIR = 1


class NetworkKind(str, Enum):
    """The three learned estimators."""
    VELOCITY = "velocity"
    ACCELERATION = "acceleration"
    STATUS = "status"


# Flight-log column layout, shared by the simulator, the log reader and the feature builders.
ANEMOMETER_COLUMNS = ["anem_1", "anem_2", "anem_3", "anem_4"]
ACCEL_COLUMNS = ["ax", "ay", "az"]
GYRO_COLUMNS = ["gx", "gy", "gz"]
MAG_COLUMNS = ["mx", "my", "mz"]
ESC_COLUMNS = ["esc_1", "esc_2", "esc_3", "esc_4"]
SENSOR_COLUMNS = (
    ["t"] + ANEMOMETER_COLUMNS + ACCEL_COLUMNS + GYRO_COLUMNS + MAG_COLUMNS
    + ["pressure"] + ESC_COLUMNS + ["voltage", "current"]
)
GT_POSITION_COLUMNS = ["gt_px", "gt_py", "gt_pz"]
GT_VELOCITY_COLUMNS = ["gt_vx", "gt_vy", "gt_vz"]
GT_ACCEL_COLUMNS = ["gt_ax", "gt_ay", "gt_az"]
GT_QUATERNION_COLUMNS = ["gt_qw", "gt_qx", "gt_qy", "gt_qz"]
TRUTH_COLUMNS = (
    GT_POSITION_COLUMNS + GT_VELOCITY_COLUMNS + GT_ACCEL_COLUMNS + GT_QUATERNION_COLUMNS + ["status"]
)
ALL_COLUMNS = SENSOR_COLUMNS + TRUTH_COLUMNS


class AxisMetrics(BaseModel):
    """Per-axis error figures (NED x, y, z)."""
    x: Optional[float] = Field(None, description="North component")
    y: Optional[float] = Field(None, description="East component")
    z: Optional[float] = Field(None, description="Down component")


class BiasErrors(BaseModel):
    """Final bias-estimate errors against the synthetic rig truth."""
    accel_m_s2: Optional[AxisMetrics] = Field(None, description="b_a estimate minus truth")
    velocity_z_m_s: Optional[float] = Field(None, description="b_w,z estimate minus truth")
    baro_m: Optional[float] = Field(None, description="b_b estimate minus truth at the last tick")
    convergence_time_s: Dict[str, Optional[float]] = Field(
        default_factory=dict,
        description="First time after which each bias error stays within 10% of its truth",
    )


class TransitionTiming(BaseModel):
    """Ground/air switching agreement between estimate and truth."""
    truth_s: List[float] = Field(default_factory=list, description="Truth transition times")
    estimated_s: List[float] = Field(default_factory=list, description="Estimated transition times")
    errors_s: List[float] = Field(default_factory=list, description="Paired timing errors")
    frame_accuracy: Optional[float] = Field(None, description="Fraction of ticks with matching status")


class OdometryMetrics(BaseModel):
    """Metrics written by the estimate and evaluate commands."""
    duration_s: float = Field(..., description="Length of the processed session")
    drift_m: Optional[float] = Field(None, description="Final position error norm")
    drift_axis_m: Optional[AxisMetrics] = Field(None, description="Final absolute position error per axis")
    position_rmse_m: Optional[AxisMetrics] = Field(None, description="Position RMSE per axis")
    velocity_rmse_m_s: Optional[AxisMetrics] = Field(None, description="Velocity RMSE per axis")
    dead_reckoning_drift_m: Optional[float] = Field(None, description="Final error of accelerometer-only integration")
    baro_drift_z_m: Optional[float] = Field(None, description="Final z difference to the barometric position")
    biases: Optional[BiasErrors] = Field(None, description="Bias-estimate errors when truth is known")
    status: Optional[TransitionTiming] = Field(None, description="Status-transition timing")


class EpochRecord(BaseModel):
    """One row of the training history."""
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


# Error hierarchy
class AeolusError(Exception):
    """Base error; exit_code is the CLI process status for this failure."""
    def __init__(
        self,
        message: str,
        code: str = "INTERNAL_ERROR",
        exit_code: int = 3,
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.code = code
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)


class ConfigurationError(AeolusError):
    """Invalid configuration, arguments or layer shapes."""
    def __init__(self, message: str = "Invalid configuration", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "CONFIGURATION_ERROR", 1, details)


class DataError(AeolusError):
    """Input data that cannot be used."""
    def __init__(self, message: str = "Invalid data", details: Optional[Dict[str, Any]] = None,
                 code: str = "DATA_ERROR"):
        super().__init__(message, code, 2, details)


class DatasetLoadError(DataError):
    """Malformed flight log; row is the 1-based data row that failed."""
    def __init__(self, message: str, row: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details["row"] = row
        self.row = row
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"{message}{where}", details, "DATASET_LOAD_ERROR")


class SchemaVersionError(DataError):
    """Flight log written with a different schema version."""
    def __init__(self, found: Optional[str], expected: int):
        super().__init__(
            f"Unsupported flight log schema {found!r}, expected schema={expected}",
            {"found": found, "expected": expected},
            "SCHEMA_VERSION_ERROR",
        )


class EmptyBatchError(DataError):
    """Not enough samples to build a single window."""
    def __init__(self, message: str = "Dataset shorter than one window", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details, "EMPTY_BATCH")


class TimestampMismatchError(DataError):
    """Estimates and truth are not sampled on the same ticks."""
    def __init__(self, message: str = "Timestamps do not match", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details, "TIMESTAMP_MISMATCH")


class DomainError(AeolusError, ValueError):
    """Argument outside the domain of a physical model."""
    def __init__(self, message: str = "Value outside model domain", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "DOMAIN_ERROR", 2, details)


class NumericalError(AeolusError):
    """Numerical failure."""
    def __init__(self, message: str = "Numerical failure", details: Optional[Dict[str, Any]] = None,
                 code: str = "NUMERICAL_ERROR"):
        super().__init__(message, code, 3, details)


class DivergenceError(NumericalError):
    """Training loss became NaN or infinite."""
    def __init__(self, message: str = "Training diverged", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details, "DIVERGENCE")
