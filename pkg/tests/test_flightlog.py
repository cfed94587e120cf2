from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.flightlog import (
    HEADER,
    RunConfig,
    list_sessions,
    load_gains,
    load_run_config,
    parse_run_config,
    read_dataset,
    session_path,
    split_sessions,
    write_dataset,
)
from src.models import (
    ALL_COLUMNS,
    SENSOR_COLUMNS,
    ConfigurationError,
    DataError,
    DatasetLoadError,
    SchemaVersionError,
)
from src.simulator import ScenarioConfig, SensorRig, VehicleParams, simulate_session

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.toml"


def sensor_frame(n=40, seed=0):
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame(rng.normal(size=(n, len(SENSOR_COLUMNS))), columns=SENSOR_COLUMNS)
    frame["t"] = np.arange(n) / 400.0
    frame["pressure"] = 101325.0 + rng.normal(size=n)
    frame.loc[1::2, "pressure"] = np.nan
    frame.loc[frame.index % 4 != 0, ["voltage", "current"]] = np.nan
    return frame


def rewrite_cell(path, row, column, value):
    """Replace one cell of data row `row` (1-based) in a written log."""
    lines = path.read_text().splitlines()
    header = lines[1].split(",")
    cells = lines[row + 1].split(",")
    cells[header.index(column)] = value
    lines[row + 1] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")


class TestDatasetRoundtrip:
    """Write and reread flight logs."""

    @pytest.fixture(scope="class")
    def session(self):
        return simulate_session(ScenarioConfig(duration_s=30.0, seed=1), VehicleParams(), SensorRig())

    def test_simulated_session_is_bit_exact(self, tmp_path, session):
        path = write_dataset(session, tmp_path / "session_000.csv")
        loaded = read_dataset(path)
        assert list(loaded.columns) == ALL_COLUMNS
        pd.testing.assert_frame_equal(loaded, session[ALL_COLUMNS].astype(float), check_exact=True)

    def test_header_line_and_empty_cells(self, tmp_path, session):
        path = write_dataset(session, tmp_path / "log.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == HEADER
        pressure = lines[1].split(",").index("pressure")
        assert lines[2].split(",")[pressure] != ""
        assert lines[3].split(",")[pressure] == ""

    def test_sensor_only_log(self, tmp_path):
        frame = sensor_frame()
        loaded = read_dataset(write_dataset(frame, tmp_path / "real.csv"))
        assert list(loaded.columns) == SENSOR_COLUMNS
        pd.testing.assert_frame_equal(loaded, frame, check_exact=True)

    def test_write_requires_sensor_columns(self, tmp_path):
        with pytest.raises(DataError):
            write_dataset(sensor_frame().drop(columns=["gx"]), tmp_path / "bad.csv")


class TestDatasetValidation:
    """Malformed logs are rejected with the failing row."""

    @pytest.fixture
    def path(self, tmp_path):
        return write_dataset(sensor_frame(), tmp_path / "log.csv")

    def test_decreasing_time_names_the_row(self, path):
        rewrite_cell(path, 17, "t", "0.001")
        with pytest.raises(DatasetLoadError) as info:
            read_dataset(path)
        assert info.value.row == 17
        assert "row 17" in str(info.value)

    def test_off_grid_time(self, path):
        rewrite_cell(path, 5, "t", "0.0101")
        with pytest.raises(DatasetLoadError) as info:
            read_dataset(path)
        assert info.value.row == 5

    @pytest.mark.parametrize("literal", ["nan", "NaN", "inf", "-Infinity"])
    def test_non_finite_literals(self, path, literal):
        rewrite_cell(path, 3, "ax", literal)
        with pytest.raises(DatasetLoadError) as info:
            read_dataset(path)
        assert info.value.row == 3

    def test_non_numeric_cell(self, path):
        rewrite_cell(path, 8, "esc_2", "fast")
        with pytest.raises(DatasetLoadError) as info:
            read_dataset(path)
        assert info.value.row == 8

    def test_missing_header(self, path):
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[1:]) + "\n")
        with pytest.raises(DatasetLoadError):
            read_dataset(path)

    def test_other_schema(self, path):
        text = path.read_text().replace("schema=1", "schema=2", 1)
        path.write_text(text)
        with pytest.raises(SchemaVersionError):
            read_dataset(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "short.csv"
        frame = sensor_frame().drop(columns=["mz"])
        with open(path, "w") as f:
            f.write(HEADER + "\n")
            frame.to_csv(f, index=False)
        with pytest.raises(DatasetLoadError, match="mz"):
            read_dataset(path)

    def test_partial_truth_rejected(self, tmp_path):
        path = tmp_path / "partial.csv"
        frame = sensor_frame()
        frame["gt_px"] = 0.0
        with open(path, "w") as f:
            f.write(HEADER + "\n")
            frame.to_csv(f, index=False)
        with pytest.raises(DatasetLoadError):
            read_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset(tmp_path / "absent.csv")


class TestSessions:
    """Tests for session files and splits."""

    @pytest.mark.parametrize("n, expected", [
        (2, (1, 1, 0)),
        (3, (1, 1, 1)),
        (4, (2, 1, 1)),
        (8, (4, 2, 2)),
        (10, (6, 2, 2)),
        (12, (6, 3, 3)),
    ])
    def test_split_sizes(self, n, expected):
        split = split_sessions(range(n))
        assert tuple(len(split[k]) for k in ("train", "validation", "test")) == expected
        assert sum(split.values(), []) == list(range(n))

    def test_single_session_rejected(self):
        with pytest.raises(DataError):
            split_sessions([0])

    def test_listing(self, tmp_path):
        for i in (2, 0, 1):
            write_dataset(sensor_frame(8), session_path(tmp_path, i))
        assert [p.name for p in list_sessions(tmp_path)] == ["session_000.csv", "session_001.csv", "session_002.csv"]
        with pytest.raises(DataError):
            list_sessions(tmp_path / "nowhere")


class TestRunConfig:
    """Tests for the TOML run configuration."""

    def test_empty_document_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("")
        assert load_run_config(path) == RunConfig()
        assert load_run_config(None) == RunConfig()

    def test_shipped_default_matches_code(self):
        assert load_run_config(DEFAULT_CONFIG) == RunConfig()

    def test_unknown_key_names_its_path(self):
        with pytest.raises(ConfigurationError, match="gains.k7"):
            parse_run_config({"gains": {"k7": [1.0, 1.0, 1.0]}})

    def test_invalid_value(self):
        with pytest.raises(ConfigurationError):
            parse_run_config({"scenario": {"baro_hz": 300}})

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[gains\nk0 = 1")
        with pytest.raises(ConfigurationError):
            load_run_config(path)
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "absent.toml")

    def test_sections_override(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('[gains]\nalpha = 0.5\n\n[paths]\nsessions = 6\n')
        config = load_run_config(path)
        assert config.gains.alpha == 0.5
        assert config.paths.sessions == 6
        assert config.scenario == ScenarioConfig()

    def test_gains_file_forms(self, tmp_path):
        table = tmp_path / "table.toml"
        table.write_text("[gains]\nbeta = 0.2\n")
        flat = tmp_path / "flat.toml"
        flat.write_text("beta = 0.2\n")
        assert load_gains(table).beta == 0.2
        assert load_gains(flat).beta == 0.2
        bad = tmp_path / "bad_gains.toml"
        bad.write_text("alpha = 2.0\n")
        with pytest.raises(ConfigurationError):
            load_gains(bad)
