import numpy as np
import pytest

from src import layers
from src.models import ConfigurationError, NumericalError

EPS = 1e-5
RTOL = 1e-4
ATOL = 1e-7
SEEDS = range(40)


def numeric_gradient(f, array: np.ndarray) -> np.ndarray:
    """Central differences of the scalar f() with respect to array, in place."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = array[idx]
        array[idx] = saved + EPS
        plus = f()
        array[idx] = saved - EPS
        minus = f()
        array[idx] = saved
        grad[idx] = (plus - minus) / (2 * EPS)
    return grad


def naive_conv(x, kernel, bias):
    b, t, _ = x.shape
    k, c_in, c_out = kernel.shape
    left = (k - 1) // 2
    out = np.zeros((b, t, c_out))
    for n in range(b):
        for i in range(t):
            for o in range(c_out):
                total = bias[o]
                for j in range(k):
                    src = i + j - left
                    if 0 <= src < t:
                        for c in range(c_in):
                            total += x[n, src, c] * kernel[j, c, o]
                out[n, i, o] = total
    return out


def naive_gru(x, p):
    b, t, _ = x.shape
    units = p["U_z"].shape[0]
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    out = np.zeros((b, t, units))
    for n in range(b):
        h = np.zeros(units)
        for i in range(t):
            z = sig(x[n, i] @ p["W_z"] + h @ p["U_z"] + p["b_z"])
            r = sig(x[n, i] @ p["W_r"] + h @ p["U_r"] + p["b_r"])
            cand = np.tanh(x[n, i] @ p["W_h"] + (r * h) @ p["U_h"] + p["b_h"])
            h = (1 - z) * h + z * cand
            out[n, i] = h
    return out


def gru_params(rng, c_in, units):
    p = {}
    for name in layers.GRU_INPUT_WEIGHTS:
        p[name] = rng.normal(scale=0.5, size=(c_in, units))
    for name in layers.GRU_RECURRENT_WEIGHTS:
        p[name] = rng.normal(scale=0.5, size=(units, units))
    for name in layers.GRU_BIASES:
        p[name] = rng.normal(scale=0.1, size=units)
    return p


class TestForwardPasses:
    """Forward passes against naive loop references."""

    @pytest.mark.parametrize("kernel_size", [1, 4, 5, 12])
    def test_conv_matches_naive(self, kernel_size):
        rng = np.random.default_rng(kernel_size)
        x = rng.normal(size=(2, 15, 3))
        kernel = rng.normal(size=(kernel_size, 3, 4))
        bias = rng.normal(size=4)
        out, _ = layers.conv1d_forward(x, kernel, bias, activation="linear")
        np.testing.assert_allclose(out, naive_conv(x, kernel, bias), atol=1e-12)
        relu_out, _ = layers.conv1d_forward(x, kernel, bias)
        np.testing.assert_allclose(relu_out, np.maximum(naive_conv(x, kernel, bias), 0.0), atol=1e-12)

    def test_same_padding_split(self):
        assert layers.same_padding(12) == (5, 6)
        assert layers.same_padding(5) == (2, 2)

    def test_gru_matches_naive(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 9, 4))
        p = gru_params(rng, 4, 5)
        seq, _ = layers.gru_forward(x, p, return_sequences=True)
        last, _ = layers.gru_forward(x, p, return_sequences=False)
        reference = naive_gru(x, p)
        np.testing.assert_allclose(seq, reference, atol=1e-12)
        np.testing.assert_allclose(last, reference[:, -1], atol=1e-12)

    def test_dense_per_step(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 6, 4))
        w, b = rng.normal(size=(4, 3)), rng.normal(size=3)
        out, _ = layers.dense_forward(x, w, b)
        np.testing.assert_allclose(out, np.einsum("btc,co->bto", x, w) + b, atol=1e-12)

    def test_softmax_is_stable(self):
        p = layers.stable_softmax(np.array([[1000.0, 0.0], [-1000.0, 1000.0]]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_shape_mismatch_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            layers.conv1d_forward(np.zeros((1, 5, 3)), np.zeros((3, 2, 4)), np.zeros(4))
        with pytest.raises(ConfigurationError):
            layers.dense_forward(np.zeros((2, 3)), np.zeros((4, 1)), np.zeros(1))

    def test_non_finite_detected(self):
        with pytest.raises(NumericalError):
            layers.check_finite(np.array([1.0, np.nan]), "dense")


class TestGradients:
    """Backward passes against central finite differences."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv_linear(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 6))
        x = rng.normal(size=(2, 6, 3))
        kernel = rng.normal(size=(k, 3, 2))
        bias = rng.normal(size=2)
        g = rng.normal(size=(2, 6, 2))
        f = lambda: float(np.sum(layers.conv1d_forward(x, kernel, bias, "linear")[0] * g))
        _, cache = layers.conv1d_forward(x, kernel, bias, "linear")
        dx, grads = layers.conv1d_backward(g, cache)
        np.testing.assert_allclose(dx, numeric_gradient(f, x), rtol=RTOL, atol=ATOL)
        np.testing.assert_allclose(grads["kernel"], numeric_gradient(f, kernel), rtol=RTOL, atol=ATOL)
        np.testing.assert_allclose(grads["bias"], numeric_gradient(f, bias), rtol=RTOL, atol=ATOL)

    def test_conv_relu_away_from_kinks(self):
        checked = 0
        for seed in SEEDS:
            rng = np.random.default_rng(1000 + seed)
            x = rng.normal(size=(2, 6, 3))
            kernel = rng.normal(size=(3, 3, 2))
            bias = rng.normal(size=2)
            g = rng.normal(size=(2, 6, 2))
            _, cache = layers.conv1d_forward(x, kernel, bias)
            if np.min(np.abs(cache.pre_activation)) < 1e-3:
                continue
            f = lambda: float(np.sum(layers.conv1d_forward(x, kernel, bias)[0] * g))
            dx, grads = layers.conv1d_backward(g, cache)
            np.testing.assert_allclose(dx, numeric_gradient(f, x), rtol=RTOL, atol=ATOL)
            np.testing.assert_allclose(grads["kernel"], numeric_gradient(f, kernel), rtol=RTOL, atol=ATOL)
            checked += 1
        assert checked >= 20

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("return_sequences", [True, False])
    def test_gru(self, seed, return_sequences):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 4, 3))
        p = gru_params(rng, 3, 3)
        out_shape = (2, 4, 3) if return_sequences else (2, 3)
        g = rng.normal(size=out_shape)
        f = lambda: float(np.sum(layers.gru_forward(x, p, return_sequences)[0] * g))
        _, cache = layers.gru_forward(x, p, return_sequences)
        dx, grads = layers.gru_backward(g, p, cache)
        np.testing.assert_allclose(dx, numeric_gradient(f, x), rtol=RTOL, atol=ATOL)
        for name, value in p.items():
            np.testing.assert_allclose(grads[name], numeric_gradient(f, value), rtol=RTOL, atol=ATOL)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_dense(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 4))
        w, b = rng.normal(size=(4, 2)), rng.normal(size=2)
        g = rng.normal(size=(3, 2))
        f = lambda: float(np.sum(layers.dense_forward(x, w, b)[0] * g))
        _, cache = layers.dense_forward(x, w, b)
        dx, grads = layers.dense_backward(g, w, cache)
        np.testing.assert_allclose(dx, numeric_gradient(f, x), rtol=RTOL, atol=ATOL)
        np.testing.assert_allclose(grads["W"], numeric_gradient(f, w), rtol=RTOL, atol=ATOL)
        np.testing.assert_allclose(grads["b"], numeric_gradient(f, b), rtol=RTOL, atol=ATOL)

    def test_mse(self):
        rng = np.random.default_rng(3)
        pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        loss, grad = layers.mse_loss(pred, target)
        assert loss == pytest.approx(np.mean((pred - target) ** 2))
        np.testing.assert_allclose(grad, numeric_gradient(lambda: layers.mse_loss(pred, target)[0], pred),
                                   rtol=RTOL, atol=ATOL)

    def test_cross_entropy(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(5, 2))
        labels = np.array([0, 1, 1, 0, 1])
        loss, grad = layers.softmax_cross_entropy(logits, labels)
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        assert loss == pytest.approx(-np.mean(np.log(p[np.arange(5), labels])))
        numeric = numeric_gradient(lambda: layers.softmax_cross_entropy(logits, labels)[0], logits)
        np.testing.assert_allclose(grad, numeric, rtol=RTOL, atol=ATOL)


class TestInitializers:
    """Tests for weight initializers."""

    def test_glorot_bounds(self):
        w = layers.glorot_uniform((30, 20), np.random.default_rng(0))
        assert np.abs(w).max() <= np.sqrt(6.0 / 50)

    def test_orthogonal(self):
        q = layers.orthogonal((6, 6), np.random.default_rng(0))
        np.testing.assert_allclose(q.T @ q, np.eye(6), atol=1e-12)
