"""
Numpy tensor engine: 1-D convolution, GRU, dense layers, activations, losses
and initializers, each with an exact backward pass.

Tensors are (batch, time, channels) or (batch, channels). Weights use the
row-vector convention y = x @ W + b.
"""
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

from .models import ConfigurationError, NumericalError

Params = Dict[str, np.ndarray]

GRU_INPUT_WEIGHTS = ("W_z", "W_r", "W_h")
GRU_RECURRENT_WEIGHTS = ("U_z", "U_r", "U_h")
GRU_BIASES = ("b_z", "b_r", "b_h")


def same_padding(kernel: int) -> Tuple[int, int]:
    """Left/right zero padding that keeps the sequence length."""
    left = (kernel - 1) // 2
    return left, kernel - 1 - left


def _require(condition: bool, message: str, **details) -> None:
    if not condition:
        raise ConfigurationError(message, details)


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    """Raise NumericalError when a layer produced NaN or inf."""
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"Non-finite values after {where}", {"layer": where})
    return x


# Activations

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis."""
    return softmax(logits, axis=-1)


# Conv1D

class ConvCache(NamedTuple):
    windows: np.ndarray
    pre_activation: np.ndarray
    kernel: np.ndarray
    relu: bool
    in_length: int


def conv1d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    activation: str = "relu",
) -> Tuple[np.ndarray, ConvCache]:
    """
    Same-padded, stride-1 cross-correlation over time.

    Args:
        x: (B, T, C_in)
        kernel: (k, C_in, C_out)
        bias: (C_out,)
        activation: "relu" or "linear"

    Returns:
        (B, T, C_out) output and the cache for conv1d_backward
    """
    _require(x.ndim == 3, "conv1d expects a (batch, time, channels) tensor", shape=list(x.shape))
    k, c_in, c_out = kernel.shape
    _require(x.shape[2] == c_in, "conv1d input channels do not match the kernel",
             input=x.shape[2], kernel=c_in)
    _require(bias.shape == (c_out,), "conv1d bias shape mismatch", bias=list(bias.shape), filters=c_out)
    left, right = same_padding(k)
    padded = np.pad(x, ((0, 0), (left, right), (0, 0)))
    windows = sliding_window_view(padded, k, axis=1)             # (B, T, C_in, k)
    z = np.einsum("btck,kco->bto", windows, kernel) + bias
    use_relu = activation == "relu"
    y = relu(z) if use_relu else z
    return y, ConvCache(windows, z, kernel, use_relu, x.shape[1])


def conv1d_backward(dy: np.ndarray, cache: ConvCache) -> Tuple[np.ndarray, Params]:
    """Gradients of conv1d_forward: (dx, {"kernel", "bias"})."""
    dz = dy * (cache.pre_activation > 0) if cache.relu else dy
    k = cache.kernel.shape[0]
    left, _ = same_padding(k)
    t = cache.in_length
    dkernel = np.einsum("btck,bto->kco", cache.windows, dz)
    dbias = dz.sum(axis=(0, 1))
    dpadded = np.zeros((dz.shape[0], t + k - 1, cache.kernel.shape[1]))
    for j in range(k):
        dpadded[:, j:j + t, :] += dz @ cache.kernel[j].T
    return dpadded[:, left:left + t, :], {"kernel": dkernel, "bias": dbias}


# GRU

class GRUCache(NamedTuple):
    x: np.ndarray
    h: np.ndarray          # (B, T+1, H), h[:, 0] is the zero initial state
    z: np.ndarray
    r: np.ndarray
    candidate: np.ndarray
    return_sequences: bool


def gru_forward(
    x: np.ndarray,
    params: Params,
    return_sequences: bool = True,
) -> Tuple[np.ndarray, GRUCache]:
    """
    GRU over a (B, T, C_in) sequence from a zero initial state.

    z = s(x W_z + h U_z + b_z), r = s(x W_r + h U_r + b_r),
    h~ = tanh(x W_h + (r * h) U_h + b_h), h' = (1 - z) h + z h~.
    """
    _require(x.ndim == 3, "GRU expects a (batch, time, channels) tensor", shape=list(x.shape))
    c_in, units = params["W_z"].shape
    _require(x.shape[2] == c_in, "GRU input channels do not match W", input=x.shape[2], weights=c_in)
    for name in GRU_RECURRENT_WEIGHTS:
        _require(params[name].shape == (units, units), f"GRU {name} shape mismatch",
                 shape=list(params[name].shape))
    b, t, _ = x.shape
    xz = x @ params["W_z"] + params["b_z"]
    xr = x @ params["W_r"] + params["b_r"]
    xh = x @ params["W_h"] + params["b_h"]
    h = np.zeros((b, t + 1, units))
    z = np.empty((b, t, units))
    r = np.empty((b, t, units))
    candidate = np.empty((b, t, units))
    for step in range(t):
        prev = h[:, step]
        z[:, step] = sigmoid(xz[:, step] + prev @ params["U_z"])
        r[:, step] = sigmoid(xr[:, step] + prev @ params["U_r"])
        candidate[:, step] = np.tanh(xh[:, step] + (r[:, step] * prev) @ params["U_h"])
        h[:, step + 1] = (1.0 - z[:, step]) * prev + z[:, step] * candidate[:, step]
    out = h[:, 1:] if return_sequences else h[:, -1]
    return out, GRUCache(x, h, z, r, candidate, return_sequences)


def gru_backward(dy: np.ndarray, params: Params, cache: GRUCache) -> Tuple[np.ndarray, Params]:
    """Backpropagation through time for gru_forward."""
    x, h, z, r, cand = cache.x, cache.h, cache.z, cache.r, cache.candidate
    b, t, _ = x.shape
    if cache.return_sequences:
        dh_out = dy
    else:
        dh_out = np.zeros((b, t, h.shape[2]))
        dh_out[:, -1] = dy
    grads = {name: np.zeros_like(params[name]) for name in GRU_INPUT_WEIGHTS + GRU_RECURRENT_WEIGHTS + GRU_BIASES}
    dx = np.empty_like(x)
    dh_next = np.zeros((b, h.shape[2]))
    for step in reversed(range(t)):
        prev = h[:, step]
        x_t = x[:, step]
        dh = dh_next + dh_out[:, step]
        dcand = dh * z[:, step]
        dz = dh * (cand[:, step] - prev)
        dprev = dh * (1.0 - z[:, step])

        da_h = dcand * (1.0 - cand[:, step] ** 2)
        grads["W_h"] += x_t.T @ da_h
        grads["b_h"] += da_h.sum(axis=0)
        reset_prev = r[:, step] * prev
        grads["U_h"] += reset_prev.T @ da_h
        dreset_prev = da_h @ params["U_h"].T
        dr = dreset_prev * prev
        dprev += dreset_prev * r[:, step]

        da_r = dr * r[:, step] * (1.0 - r[:, step])
        grads["W_r"] += x_t.T @ da_r
        grads["U_r"] += prev.T @ da_r
        grads["b_r"] += da_r.sum(axis=0)
        dprev += da_r @ params["U_r"].T

        da_z = dz * z[:, step] * (1.0 - z[:, step])
        grads["W_z"] += x_t.T @ da_z
        grads["U_z"] += prev.T @ da_z
        grads["b_z"] += da_z.sum(axis=0)
        dprev += da_z @ params["U_z"].T

        dx[:, step] = da_z @ params["W_z"].T + da_r @ params["W_r"].T + da_h @ params["W_h"].T
        dh_next = dprev
    return dx, grads


# Dense

class DenseCache(NamedTuple):
    x: np.ndarray


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, DenseCache]:
    """Affine map on the last axis; works per step on sequences."""
    _require(x.shape[-1] == weight.shape[0], "dense input width does not match W",
             input=x.shape[-1], weights=weight.shape[0])
    return x @ weight + bias, DenseCache(x)


def dense_backward(dy: np.ndarray, weight: np.ndarray, cache: DenseCache) -> Tuple[np.ndarray, Params]:
    x2 = cache.x.reshape(-1, cache.x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ weight.T, {"W": x2.T @ dy2, "b": dy2.sum(axis=0)}


# Losses

def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over batch and components; returns (loss, dloss/dpred)."""
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Batch mean of -log p(true class); gradient taken w.r.t. the logits."""
    labels = np.asarray(labels).astype(int).reshape(-1)
    b = logits.shape[0]
    log_p = log_softmax(logits, axis=-1)
    loss = -float(np.mean(log_p[np.arange(b), labels]))
    dlogits = np.exp(log_p)
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


# Initializers

def glorot_uniform(shape: Tuple[int, ...], rng: np.random.Generator,
                   fan_in: Optional[int] = None, fan_out: Optional[int] = None) -> np.ndarray:
    fan_in = fan_in or shape[0]
    fan_out = fan_out or shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def orthogonal(shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal matrix through the SVD of a Gaussian draw."""
    a = rng.standard_normal(shape)
    u, _, v = np.linalg.svd(a, full_matrices=False)
    return u if u.shape == shape else v
