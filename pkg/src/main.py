"""
Command implementations behind run.py: simulate, train, estimate, evaluate.
"""
import logging
import logging.config
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .caching_service import feature_cache
from .config import settings
from .evaluation import (
    compute_metrics,
    read_estimates,
    write_estimates,
    write_figure_csvs,
    write_metrics,
)
from .flightlog import RunConfig, list_sessions, load_gains, read_dataset, session_path, split_sessions, write_dataset
from .models import DataError, NetworkKind, OdometryMetrics
from .network import build_airflow_networks, load_weights, predict, save_weights
from .odometry import NetworkSet, run_odometry
from .simulator import ScenarioSummary, scenario_summary, simulate_session
from .training import TrainResult, dataset_windows, status_accuracy, train, write_history

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Configure the root logger: stdout, plus a rotating file when one is given."""
    level = level or settings.LOG_LEVEL.value
    log_file = log_file or settings.LOG_FILE
    handlers = {
        "default": {
            "formatter": "default",
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stdout",
        }
    }
    if log_file:
        handlers["file"] = {
            "formatter": "default",
            "class": "logging.handlers.RotatingFileHandler",
            "filename": log_file,
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
        }
    logging.config.dictConfig({
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {"default": {"format": settings.LOG_FORMAT}},
        "handlers": handlers,
        "loggers": {"": {"handlers": list(handlers), "level": level}},
    })


def default_weights_path(config: RunConfig, kind: NetworkKind) -> Path:
    return Path(config.paths.weights_dir) / f"{NetworkKind(kind).value}.json"


def cmd_simulate(
    config: RunConfig,
    out_dir: PathLike,
    seed: Optional[int] = None,
    sessions: Optional[int] = None,
) -> List[Tuple[Path, ScenarioSummary]]:
    """
    Write sessions session_000.csv, session_001.csv, ... to out_dir.

    Session i uses seed + i, so a rerun with the same seed reproduces every file.
    """
    base_seed = config.scenario.seed if seed is None else seed
    count = sessions or config.paths.sessions
    written = []
    for i in range(count):
        frame = simulate_session(config.scenario, config.vehicle, config.rig, base_seed + i)
        path = write_dataset(frame, session_path(out_dir, i))
        summary = scenario_summary(frame)
        logger.info(
            f"Session {i}: {summary.duration_s:.1f} s, {summary.distance_m:.2f} m flown, "
            f"takeoff {summary.takeoff_s}, landing {summary.landing_s}"
        )
        written.append((path, summary))
    return written


def _load_split(data_dir: PathLike) -> Dict[str, list]:
    paths = list_sessions(data_dir)
    split = split_sessions(paths)
    logger.info(
        f"Split {len(paths)} sessions: {len(split['train'])} train, "
        f"{len(split['validation'])} validation, {len(split['test'])} test"
    )
    return {name: [read_dataset(p) for p in group] for name, group in split.items()}


def cmd_train(
    kind: NetworkKind,
    config: RunConfig,
    data_dir: PathLike,
    out_path: Optional[PathLike] = None,
    seed: Optional[int] = None,
) -> Tuple[TrainResult, Dict[str, float]]:
    """
    Train one network on the training split and keep the best validation epoch.

    Writes the weights JSON and a history CSV next to it; returns the result
    and validation figures (per-axis RMSE or accuracy).
    """
    kind = NetworkKind(kind)
    cfg = config.training if seed is None else config.training.copy(update={"seed": seed})
    split = _load_split(data_dir)
    spec = build_airflow_networks(
        cfg.window_samples(NetworkKind.VELOCITY),
        cfg.window_samples(NetworkKind.ACCELERATION),
        cfg.window_samples(NetworkKind.STATUS),
    )[kind]
    train_set = dataset_windows(split["train"], kind, cfg, config.attitude)
    val_set = dataset_windows(split["validation"], kind, cfg, config.attitude) if split["validation"] else None
    result = train(spec, train_set, val_set, cfg)

    out_path = Path(out_path) if out_path else default_weights_path(config, kind)
    save_weights(out_path, spec, result.weights)
    write_history(out_path.with_name(f"{out_path.stem}_history.csv"), result.history)

    report: Dict[str, float] = {"best_epoch": float(result.best_epoch)}
    if val_set is not None:
        outputs = predict(spec, result.weights, val_set.x, cfg.batch_size)
        if spec.is_classifier:
            report["val_accuracy"] = status_accuracy(outputs, val_set.y)
        else:
            rmse = np.sqrt(np.mean(np.square(outputs - val_set.y), axis=0))
            report.update({f"val_rmse_{axis}": float(v) for axis, v in zip("xyz", rmse)})
    logger.info(f"{kind.value} network trained: {report}")
    return result, report


def load_networks(config: RunConfig, weights: Dict[NetworkKind, Optional[PathLike]]) -> NetworkSet:
    """Weights for each kind, from the given path or the configured weights directory."""
    networks: NetworkSet = {}
    for kind in NetworkKind:
        path = weights.get(kind) or default_weights_path(config, kind)
        if not Path(path).exists():
            if kind == NetworkKind.STATUS:
                raise DataError(f"Status network weights not found: {path}", {"path": str(path)})
            logger.warning(f"No {kind.value} weights at {path}; running without that network")
            continue
        networks[kind] = load_weights(path)
    return networks


def cmd_estimate(
    config: RunConfig,
    dataset: PathLike,
    out_dir: PathLike,
    weights: Optional[Dict[NetworkKind, Optional[PathLike]]] = None,
    gains_path: Optional[PathLike] = None,
    no_networks: bool = False,
) -> OdometryMetrics:
    """
    Run odometry on one dataset and write estimates.csv, metrics.json and the
    figure tables to out_dir.
    """
    frame = read_dataset(dataset)
    gains = load_gains(gains_path) if gains_path else config.gains
    networks = {} if no_networks else load_networks(config, weights or {})
    result = run_odometry(
        frame,
        networks,
        gains,
        config.attitude,
        oracle=no_networks,
        inference_stride=config.training.inference_stride,
        feature_boxcar=config.training.feature_boxcar,
    )
    out_dir = Path(out_dir)
    estimates = result.to_frame()
    write_estimates(estimates, out_dir / "estimates.csv")
    metrics = compute_metrics(estimates, frame, config.rig)
    write_metrics(metrics, out_dir / "metrics.json")
    write_figure_csvs(estimates, frame, out_dir, config.rig)
    logger.info(f"Feature cache: {feature_cache.get_stats()}")
    return metrics


def cmd_evaluate(
    config: RunConfig,
    estimates_path: PathLike,
    dataset: PathLike,
    out_dir: Optional[PathLike] = None,
) -> OdometryMetrics:
    """Recompute the metrics of an estimates file against a dataset; writes report.json."""
    estimates = read_estimates(estimates_path)
    truth = read_dataset(dataset)
    metrics = compute_metrics(estimates, truth, config.rig)
    out_dir = Path(out_dir) if out_dir else Path(estimates_path).parent
    write_metrics(metrics, out_dir / "report.json")
    return metrics
