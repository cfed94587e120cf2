"""
Flight-log persistence and run configuration.

A dataset is a CSV on the 400 Hz base grid, preceded by a schema line:

    # aeolus-flightlog schema=1
    t,anem_1,...,status

Empty cells mark ticks on which a slower sensor has no sample. Ground-truth
columns are optional (absent for real logs).
"""
import logging
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError, validator

from .estimators import AttitudeGains
from .fusion import GainConfig
from .models import (
    ALL_COLUMNS,
    SENSOR_COLUMNS,
    TRUTH_COLUMNS,
    ConfigurationError,
    DataError,
    DatasetLoadError,
    SchemaVersionError,
    StrictModel,
)
from .simulator import BASE_RATE_HZ, ScenarioConfig, SensorRig, VehicleParams
from .training import TrainConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HEADER_PREFIX = "# aeolus-flightlog"
HEADER = f"{HEADER_PREFIX} schema={SCHEMA_VERSION}"
FLOAT_FORMAT = "%.17g"
GRID_TOL = 1e-6

_SCHEMA_RE = re.compile(r"schema=(\S+)")

PathLike = Union[str, Path]


def write_dataset(frame: pd.DataFrame, path: PathLike) -> Path:
    """
    Write a flight log; floats keep 17 significant digits so a reread is bit-exact.

    Raises:
        DataError: Required sensor columns are missing
    """
    missing = [c for c in SENSOR_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError("Cannot write dataset without sensor columns", {"missing": missing})
    columns = list(SENSOR_COLUMNS)
    if all(c in frame.columns for c in TRUTH_COLUMNS):
        columns += TRUTH_COLUMNS
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(HEADER + "\n")
        frame[columns].to_csv(f, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def _parse_column(raw: pd.Series, name: str) -> np.ndarray:
    """Strings to floats; empty cells become NaN, anything else unparsable is an error."""
    values = raw.str.strip()
    empty = values == ""
    lowered = values.str.lower()
    literal = lowered.isin(["nan", "-nan", "+nan", "inf", "-inf", "+inf", "infinity", "-infinity", "+infinity"])
    if literal.any():
        row = int(np.flatnonzero(literal.to_numpy())[0]) + 1
        raise DatasetLoadError(f"Non-finite literal in column '{name}'", row=row)
    out = np.full(len(values), np.nan)
    present = ~empty.to_numpy()
    cells = values[present].to_numpy(dtype=str)
    try:
        out[present] = cells.astype(float)
    except ValueError:
        for position, cell in zip(np.flatnonzero(present), cells):
            try:
                float(cell)
            except ValueError:
                raise DatasetLoadError(f"Non-numeric value '{cell}' in column '{name}'", row=int(position) + 1)
    return out


def read_dataset(path: PathLike) -> pd.DataFrame:
    """
    Load and validate a flight log.

    Raises:
        DatasetLoadError: Missing header or columns, non-numeric cells, NaN or
            infinite values, t not strictly increasing or off the base grid
        SchemaVersionError: The schema line names another version
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            first = f.readline().rstrip("\r\n")
            if not first.startswith(HEADER_PREFIX):
                raise DatasetLoadError(f"{path.name}: missing '{HEADER_PREFIX}' header line", row=0)
            match = _SCHEMA_RE.search(first)
            found = match.group(1) if match else None
            if found != str(SCHEMA_VERSION):
                raise SchemaVersionError(found, SCHEMA_VERSION)
            raw = pd.read_csv(f, dtype=str, keep_default_na=False)
    except OSError as e:
        raise DataError(f"Cannot read dataset {path}: {e}", {"path": str(path)})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetLoadError(f"{path.name}: malformed CSV ({e})")

    missing = [c for c in SENSOR_COLUMNS if c not in raw.columns]
    if missing:
        raise DatasetLoadError(f"{path.name}: missing columns {missing}", row=0, details={"missing": missing})
    truth_present = [c for c in TRUTH_COLUMNS if c in raw.columns]
    if truth_present and len(truth_present) != len(TRUTH_COLUMNS):
        absent = [c for c in TRUTH_COLUMNS if c not in raw.columns]
        raise DatasetLoadError(f"{path.name}: incomplete ground-truth columns", row=0, details={"missing": absent})
    unknown = [c for c in raw.columns if c not in ALL_COLUMNS]
    if unknown:
        raise DatasetLoadError(f"{path.name}: unknown columns {unknown}", row=0, details={"unknown": unknown})

    columns = SENSOR_COLUMNS + truth_present
    frame = pd.DataFrame({name: _parse_column(raw[name], name) for name in columns})
    if len(frame) == 0:
        raise DatasetLoadError(f"{path.name}: no data rows", row=1)

    t = frame["t"].to_numpy()
    if np.isnan(t).any():
        raise DatasetLoadError(f"{path.name}: empty timestamp", row=int(np.flatnonzero(np.isnan(t))[0]) + 1)
    steps = np.diff(t)
    if (steps <= 0).any():
        raise DatasetLoadError(f"{path.name}: t is not strictly increasing", row=int(np.flatnonzero(steps <= 0)[0]) + 2)
    ticks = t * BASE_RATE_HZ
    off_grid = np.abs(ticks - np.round(ticks)) > GRID_TOL
    if off_grid.any():
        raise DatasetLoadError(
            f"{path.name}: t is not on the {BASE_RATE_HZ} Hz grid", row=int(np.flatnonzero(off_grid)[0]) + 1
        )
    logger.debug(f"Read {len(frame)} rows from {path}")
    return frame


def session_path(directory: PathLike, index: int) -> Path:
    return Path(directory) / f"session_{index:03d}.csv"


def list_sessions(directory: PathLike) -> List[Path]:
    """Session files of a data directory in index order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"Data directory not found: {directory}", {"path": str(directory)})
    return sorted(directory.glob("session_*.csv"))


def split_sessions(sessions: Sequence) -> Dict[str, List]:
    """
    Split whole sessions into train, validation and test.

    With four or more sessions validation and test each get max(1, round(n/4)),
    the rest trains. Three sessions split 1/1/1 and two split 1/1/0.

    Raises:
        DataError: Fewer than two sessions
    """
    sessions = list(sessions)
    n = len(sessions)
    if n < 2:
        raise DataError("At least 2 sessions are needed to split", {"sessions": n})
    if n == 2:
        n_val, n_test = 1, 0
    elif n == 3:
        n_val, n_test = 1, 1
    else:
        n_val = n_test = max(1, round(n / 4))
    n_train = n - n_val - n_test
    return {
        "train": sessions[:n_train],
        "validation": sessions[n_train:n_train + n_val],
        "test": sessions[n_train + n_val:],
    }


class PathsConfig(StrictModel):
    data_dir: str = "data"
    weights_dir: str = "weights"
    output_dir: str = "out"
    sessions: int = 4

    @validator("sessions")
    def validate_sessions(cls, v: int) -> int:
        if v < 1:
            raise ValueError("sessions must be at least 1")
        return v


class RunConfig(StrictModel):
    """Everything a run needs; every section has defaults so an empty document is valid."""
    scenario: ScenarioConfig = ScenarioConfig()
    vehicle: VehicleParams = VehicleParams()
    rig: SensorRig = SensorRig()
    gains: GainConfig = GainConfig()
    attitude: AttitudeGains = AttitudeGains()
    training: TrainConfig = TrainConfig()
    paths: PathsConfig = PathsConfig()


def _error_paths(error: ValidationError) -> List[str]:
    return [".".join(str(p) for p in e["loc"]) + f": {e['msg']}" for e in error.errors()]


def parse_run_config(document: Dict) -> RunConfig:
    try:
        return RunConfig.parse_obj(document)
    except ValidationError as e:
        problems = _error_paths(e)
        raise ConfigurationError(f"Invalid run configuration: {'; '.join(problems)}", {"errors": problems})


def load_run_config(path: Optional[PathLike] = None) -> RunConfig:
    """
    Load a TOML run configuration; None gives the defaults.

    Raises:
        ConfigurationError: Unreadable file, TOML syntax error, unknown key or invalid value
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, "rb") as f:
            document = tomllib.load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {path}: {e}", {"path": str(path)})
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Config {path} is not valid TOML: {e}", {"path": str(path)})
    config = parse_run_config(document)
    logger.info(f"Loaded run configuration from {path}")
    return config


def load_gains(path: PathLike) -> GainConfig:
    """Observer gains from a TOML file, either top-level keys or a [gains] table."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            document = tomllib.load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read gains {path}: {e}", {"path": str(path)})
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Gains file {path} is not valid TOML: {e}", {"path": str(path)})
    try:
        return GainConfig.parse_obj(document.get("gains", document))
    except ValidationError as e:
        problems = _error_paths(e)
        raise ConfigurationError(f"Invalid gains: {'; '.join(problems)}", {"errors": problems})
