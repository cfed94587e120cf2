"""
Network specifications, weights, forward/backward passes and the JSON
weights file for the three airflow estimators.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import Field, validator

from . import layers
from .models import ConfigurationError, DataError, NetworkKind, SchemaVersionError, StrictModel

logger = logging.getLogger(__name__)

WEIGHTS_SCHEMA = 1


class Conv1DSpec(StrictModel):
    type: Literal["conv1d"] = "conv1d"
    filters: int
    kernel: int
    activation: Literal["relu", "linear"] = "relu"


class GRUSpec(StrictModel):
    type: Literal["gru"] = "gru"
    units: int
    return_sequences: bool = True


class DenseSpec(StrictModel):
    type: Literal["dense"] = "dense"
    units: int
    activation: Literal["linear", "softmax"] = "linear"


LayerSpec = Union[Conv1DSpec, GRUSpec, DenseSpec]


class NetworkSpec(StrictModel):
    """Ordered layer list plus the input contract of one estimator."""
    kind: NetworkKind
    input_channels: List[str]
    window_samples: int = Field(..., description="Sequence length the network is trained on")
    layers: List[LayerSpec]

    @validator("layers")
    def validate_layers(cls, v: List[LayerSpec]) -> List[LayerSpec]:
        """Adjacent layers must agree on tensor rank."""
        if not v:
            raise ValueError("a network needs at least one layer")
        sequence = True
        for i, layer in enumerate(v):
            if isinstance(layer, (Conv1DSpec, GRUSpec)) and not sequence:
                raise ValueError(f"layer {i} ({layer.type}) needs a sequence input")
            if isinstance(layer, GRUSpec):
                sequence = layer.return_sequences
        for i, layer in enumerate(v[:-1]):
            if isinstance(layer, DenseSpec) and layer.activation == "softmax":
                raise ValueError(f"softmax dense layer {i} must be the last layer")
        return v

    @property
    def n_inputs(self) -> int:
        return len(self.input_channels)

    @property
    def output_units(self) -> int:
        last = self.layers[-1]
        return last.units if isinstance(last, (DenseSpec, GRUSpec)) else last.filters

    @property
    def is_classifier(self) -> bool:
        last = self.layers[-1]
        return isinstance(last, DenseSpec) and last.activation == "softmax"

    def layer_names(self) -> List[str]:
        return [f"{layer.type}_{i}" for i, layer in enumerate(self.layers)]

    def fingerprint(self) -> str:
        """sha256 of the canonical spec JSON."""
        return hashlib.sha256(self.json(sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class Weights:
    """Per-layer named arrays plus the frozen input normalization."""
    layers: Dict[str, Dict[str, np.ndarray]]
    mean: np.ndarray
    std: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)

    def copy(self) -> "Weights":
        return Weights(
            {name: {k: v.copy() for k, v in params.items()} for name, params in self.layers.items()},
            self.mean.copy(),
            self.std.copy(),
            dict(self.meta),
        )

    def items(self):
        """(layer, param, array) triples in a fixed order."""
        for name in sorted(self.layers):
            for param in sorted(self.layers[name]):
                yield name, param, self.layers[name][param]

    def zeros_like(self) -> "Weights":
        return Weights(
            {name: {k: np.zeros_like(v) for k, v in params.items()} for name, params in self.layers.items()},
            self.mean.copy(),
            self.std.copy(),
        )

    def checksum(self) -> str:
        """sha256 over the raw bytes of every array, normalization included."""
        digest = hashlib.sha256()
        for name, param, array in self.items():
            digest.update(f"{name}/{param}".encode("utf-8"))
            digest.update(np.ascontiguousarray(array, dtype=np.float64).tobytes())
        digest.update(np.ascontiguousarray(self.mean, dtype=np.float64).tobytes())
        digest.update(np.ascontiguousarray(self.std, dtype=np.float64).tobytes())
        return digest.hexdigest()


def param_shapes(spec: NetworkSpec) -> Dict[str, Dict[str, Tuple[int, ...]]]:
    """Parameter shapes of every layer, following the channel flow from the input."""
    shapes = {}
    channels = spec.n_inputs
    for name, layer in zip(spec.layer_names(), spec.layers):
        if isinstance(layer, Conv1DSpec):
            shapes[name] = {"kernel": (layer.kernel, channels, layer.filters), "bias": (layer.filters,)}
            channels = layer.filters
        elif isinstance(layer, GRUSpec):
            h = layer.units
            shapes[name] = {}
            for w in layers.GRU_INPUT_WEIGHTS:
                shapes[name][w] = (channels, h)
            for u in layers.GRU_RECURRENT_WEIGHTS:
                shapes[name][u] = (h, h)
            for b in layers.GRU_BIASES:
                shapes[name][b] = (h,)
            channels = h
        else:
            shapes[name] = {"W": (channels, layer.units), "b": (layer.units,)}
            channels = layer.units
    return shapes


def parameter_count(spec: NetworkSpec) -> int:
    return int(sum(np.prod(s) for params in param_shapes(spec).values() for s in params.values()))


def zero_weights(spec: NetworkSpec) -> Weights:
    return Weights(
        {name: {k: np.zeros(s) for k, s in params.items()} for name, params in param_shapes(spec).items()},
        np.zeros(spec.n_inputs),
        np.ones(spec.n_inputs),
    )


def init_weights(spec: NetworkSpec, seed: int = 0) -> Weights:
    """Glorot-uniform input kernels, orthogonal recurrent matrices, zero biases."""
    rng = np.random.default_rng(seed)
    weights = zero_weights(spec)
    for (name, params), layer in zip(param_shapes(spec).items(), spec.layers):
        if isinstance(layer, Conv1DSpec):
            k, c_in, c_out = params["kernel"]
            weights.layers[name]["kernel"] = layers.glorot_uniform(params["kernel"], rng, k * c_in, k * c_out)
        elif isinstance(layer, GRUSpec):
            for w in layers.GRU_INPUT_WEIGHTS:
                weights.layers[name][w] = layers.glorot_uniform(params[w], rng)
            for u in layers.GRU_RECURRENT_WEIGHTS:
                weights.layers[name][u] = layers.orthogonal(params[u], rng)
        else:
            weights.layers[name]["W"] = layers.glorot_uniform(params["W"], rng)
    return weights


def validate_weights(spec: NetworkSpec, weights: Weights) -> None:
    """Raise ConfigurationError unless every array matches the spec shapes."""
    expected = param_shapes(spec)
    if set(expected) != set(weights.layers):
        raise ConfigurationError(
            "Weights do not match the network layers",
            {"expected": sorted(expected), "found": sorted(weights.layers)},
        )
    for name, params in expected.items():
        for param, shape in params.items():
            found = weights.layers[name].get(param)
            if found is None or tuple(found.shape) != tuple(shape):
                raise ConfigurationError(
                    f"Shape mismatch for {name}/{param}",
                    {"expected": list(shape), "found": None if found is None else list(found.shape)},
                )
    if weights.mean.shape != (spec.n_inputs,) or weights.std.shape != (spec.n_inputs,):
        raise ConfigurationError("Normalization constants do not match the input channels")


def _forward(spec: NetworkSpec, weights: Weights, x: np.ndarray):
    if x.ndim != 3 or x.shape[2] != spec.n_inputs:
        raise ConfigurationError(
            f"{spec.kind.value} network expects (batch, time, {spec.n_inputs}) input",
            {"shape": list(x.shape)},
        )
    out = (x - weights.mean) / weights.std
    caches = []
    for name, layer in zip(spec.layer_names(), spec.layers):
        params = weights.layers[name]
        if isinstance(layer, Conv1DSpec):
            out, cache = layers.conv1d_forward(out, params["kernel"], params["bias"], layer.activation)
        elif isinstance(layer, GRUSpec):
            out, cache = layers.gru_forward(out, params, layer.return_sequences)
        else:
            out, cache = layers.dense_forward(out, params["W"], params["b"])
        caches.append(cache)
    sequence_out = out.ndim == 3
    if sequence_out:
        out = out[:, -1]
    return out, caches, sequence_out


def network_forward(spec: NetworkSpec, weights: Weights, x: np.ndarray) -> np.ndarray:
    """
    Run the network on a (B, T, C) batch.

    Sequence outputs are read out at the last step; classifiers return
    softmax probabilities.
    """
    out, _, _ = _forward(spec, weights, x)
    if spec.is_classifier:
        out = layers.stable_softmax(out)
    return layers.check_finite(out, f"{spec.kind.value} network")


def predict(spec: NetworkSpec, weights: Weights, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """network_forward over a large set of windows in batches."""
    if len(x) == 0:
        return np.zeros((0, spec.output_units))
    return np.concatenate([network_forward(spec, weights, x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


def network_gradients(
    spec: NetworkSpec,
    weights: Weights,
    x: np.ndarray,
    y: np.ndarray,
) -> Tuple[float, Weights]:
    """
    Mean batch loss and its exact gradients.

    Loss is cross-entropy for classifiers and MSE otherwise. Normalization
    constants are frozen and get no gradient.
    """
    out, caches, sequence_out = _forward(spec, weights, x)
    if spec.is_classifier:
        loss, dout = layers.softmax_cross_entropy(out, y)
    else:
        loss, dout = layers.mse_loss(out, y)
    if sequence_out:
        dseq = np.zeros(x.shape[:2] + (dout.shape[-1],))
        dseq[:, -1] = dout
        dout = dseq
    grads = weights.zeros_like()
    for name, layer, cache in reversed(list(zip(spec.layer_names(), spec.layers, caches))):
        params = weights.layers[name]
        if isinstance(layer, Conv1DSpec):
            dout, g = layers.conv1d_backward(dout, cache)
        elif isinstance(layer, GRUSpec):
            dout, g = layers.gru_backward(dout, params, cache)
        else:
            dout, g = layers.dense_backward(dout, params["W"], cache)
        grads.layers[name] = g
    return loss, grads


VELOCITY_CHANNELS = ["anem_1", "anem_2", "anem_3", "anem_4", "gx", "gy", "gz"]
ACCELERATION_CHANNELS = [
    "anem_1", "anem_2", "anem_3", "anem_4",
    "esc_1", "esc_2", "esc_3", "esc_4",
    "att_qx", "att_qy", "att_qz",
    "voltage", "current",
]
STATUS_CHANNELS = [
    "vert_mean", "vert_diff", "esc_mean", "voltage", "current",
    "baro_altitude", "accel_norm", "gyro_norm",
]


def build_airflow_networks(
    velocity_window: int = 400,
    acceleration_window: int = 200,
    status_window: int = 200,
) -> Dict[NetworkKind, NetworkSpec]:
    """The velocity, acceleration and status estimators."""
    return {
        NetworkKind.VELOCITY: NetworkSpec(
            kind=NetworkKind.VELOCITY,
            input_channels=VELOCITY_CHANNELS,
            window_samples=velocity_window,
            layers=[
                Conv1DSpec(filters=16, kernel=5),
                Conv1DSpec(filters=16, kernel=5),
                GRUSpec(units=16, return_sequences=True),
                GRUSpec(units=16, return_sequences=True),
                DenseSpec(units=3),
            ],
        ),
        NetworkKind.ACCELERATION: NetworkSpec(
            kind=NetworkKind.ACCELERATION,
            input_channels=ACCELERATION_CHANNELS,
            window_samples=acceleration_window,
            layers=[
                Conv1DSpec(filters=5, kernel=12),
                Conv1DSpec(filters=5, kernel=12),
                GRUSpec(units=12, return_sequences=True),
                GRUSpec(units=12, return_sequences=False),
                DenseSpec(units=3),
            ],
        ),
        NetworkKind.STATUS: NetworkSpec(
            kind=NetworkKind.STATUS,
            input_channels=STATUS_CHANNELS,
            window_samples=status_window,
            layers=[
                Conv1DSpec(filters=4, kernel=5),
                GRUSpec(units=6, return_sequences=False),
                DenseSpec(units=2, activation="softmax"),
            ],
        ),
    }


# Weights file

def weights_to_document(spec: NetworkSpec, weights: Weights) -> Dict:
    return {
        "schema": WEIGHTS_SCHEMA,
        "network": spec.kind.value,
        "fingerprint": spec.fingerprint(),
        "spec": json.loads(spec.json()),
        "layers": {
            name: {
                param: {"shape": list(array.shape), "data": array.ravel().tolist()}
                for param, array in sorted(params.items())
            }
            for name, params in sorted(weights.layers.items())
        },
        "normalization": {"mean": weights.mean.tolist(), "std": weights.std.tolist()},
        "meta": weights.meta,
    }


def save_weights(path: Union[str, Path], spec: NetworkSpec, weights: Weights) -> str:
    """Write the weights JSON; returns the weights checksum."""
    validate_weights(spec, weights)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # json writes floats with repr(), which round-trips float64 exactly.
    path.write_text(json.dumps(weights_to_document(spec, weights), sort_keys=True), encoding="utf-8")
    checksum = weights.checksum()
    logger.info(f"Saved {spec.kind.value} weights to {path} (sha256 {checksum[:12]})")
    return checksum


def load_weights(path: Union[str, Path], spec: Optional[NetworkSpec] = None) -> Tuple[NetworkSpec, Weights]:
    """
    Read a weights JSON and validate it against spec (or the embedded spec).

    Raises:
        SchemaVersionError: File written with another schema
        ConfigurationError: Spec fingerprint or array shapes do not match
        DataError: File missing or not valid JSON
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"Weights file not found: {path}", {"path": str(path)})
    except json.JSONDecodeError as e:
        raise DataError(f"Weights file is not valid JSON: {path}", {"error": str(e)})
    if doc.get("schema") != WEIGHTS_SCHEMA:
        raise SchemaVersionError(str(doc.get("schema")), WEIGHTS_SCHEMA)
    embedded = NetworkSpec.parse_obj(doc["spec"])
    spec = spec or embedded
    if doc.get("fingerprint") != spec.fingerprint():
        raise ConfigurationError(
            f"Weights were trained for a different {spec.kind.value} network",
            {"expected": spec.fingerprint(), "found": doc.get("fingerprint")},
        )
    arrays = {
        name: {
            param: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for param, entry in params.items()
        }
        for name, params in doc["layers"].items()
    }
    weights = Weights(
        arrays,
        np.asarray(doc["normalization"]["mean"], dtype=np.float64),
        np.asarray(doc["normalization"]["std"], dtype=np.float64),
        doc.get("meta", {}),
    )
    validate_weights(spec, weights)
    logger.debug(f"Loaded {spec.kind.value} weights from {path}")
    return spec, weights
