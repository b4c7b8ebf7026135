"""Layers with explicit forward/backward passes on numpy arrays.

Convolutions run channels-last ([batch, length, channels]) through an
im2col + GEMM path, chunked over the batch so scratch memory stays
bounded; everything else is plain vectorized numpy. Each layer caches
what its backward pass needs when called with train=True.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Upper bound on the per-chunk im2col scratch buffer.
_IM2COL_BUDGET_BYTES = 128 * 2**20


class NnError(Exception):
    pass


class ShapeMismatch(NnError):
    pass


class NonFiniteActivation(NnError):
    pass


class StaleCache(NnError):
    pass


class Layer:
    """Forward/backward unit; parameterless layers inherit the no-op parts."""

    name = "layer"

    def forward(self, x: np.ndarray, train: bool, rng) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return []

    def grad_items(self) -> list[tuple[str, np.ndarray]]:
        return []

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        """Tensors persisted in checkpoints (parameters plus running stats)."""
        return self.param_items()


def _batch_chunks(n_batch: int, per_sample_bytes: int):
    chunk = max(1, _IM2COL_BUDGET_BYTES // max(1, per_sample_bytes))
    for lo in range(0, n_batch, chunk):
        yield lo, min(lo + chunk, n_batch)


class Conv1d(Layer):
    """Stride-1 cross-correlation with zero 'same' padding."""

    def __init__(self, in_channels: int, filters: int, kernel: int, rng, dtype=np.float32):
        if kernel < 1 or filters < 1 or in_channels < 1:
            raise ShapeMismatch("kernel, filters and in_channels must be positive")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.pad_left = (kernel - 1) // 2
        self.pad_right = kernel // 2
        scale = 1.0 / np.sqrt(kernel * in_channels)
        self.w = (rng.standard_normal((kernel, in_channels, filters)) * scale).astype(dtype)
        self.b = np.zeros(filters, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.name = f"conv{kernel}x{filters}"
        self._x: np.ndarray | None = None

    def _pad(self, x: np.ndarray) -> np.ndarray:
        batch, length, channels = x.shape
        out = np.zeros((batch, length + self.kernel - 1, channels), dtype=x.dtype)
        out[:, self.pad_left : self.pad_left + length, :] = x
        return out

    def _cols(self, x_pad: np.ndarray, lo: int, hi: int, length: int) -> np.ndarray:
        view = sliding_window_view(x_pad[lo:hi], self.kernel, axis=1)  # [b, L, C, K]
        return np.ascontiguousarray(view.transpose(0, 1, 3, 2)).reshape(
            (hi - lo) * length, self.kernel * self.in_channels
        )

    def forward(self, x, train, rng):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(
                f"{self.name}: expected [batch, length, {self.in_channels}], got {x.shape}"
            )
        batch, length, _ = x.shape
        x_pad = self._pad(x)
        w_mat = self.w.reshape(-1, self.filters)
        out = np.empty((batch, length, self.filters), dtype=x.dtype)
        per_sample = length * self.kernel * self.in_channels * x.dtype.itemsize
        for lo, hi in _batch_chunks(batch, per_sample):
            cols = self._cols(x_pad, lo, hi, length)
            out[lo:hi] = (cols @ w_mat).reshape(hi - lo, length, self.filters)
        out += self.b
        self._x = x if train else None
        return out

    def backward(self, grad):
        if self._x is None:
            raise StaleCache(f"{self.name}: backward without a train-mode forward")
        x = self._x
        batch, length, _ = x.shape
        x_pad = self._pad(x)
        w_mat = self.w.reshape(-1, self.filters)
        dw_mat = np.zeros_like(w_mat, dtype=np.float64 if x.dtype == np.float64 else np.float32)
        dx_pad = np.zeros_like(x_pad)
        per_sample = length * self.kernel * self.in_channels * x.dtype.itemsize
        for lo, hi in _batch_chunks(batch, per_sample):
            g = grad[lo:hi].reshape((hi - lo) * length, self.filters)
            cols = self._cols(x_pad, lo, hi, length)
            dw_mat += cols.T @ g
            gcols = (g @ w_mat.T).reshape(hi - lo, length, self.kernel, self.in_channels)
            for k in range(self.kernel):
                dx_pad[lo:hi, k : k + length, :] += gcols[:, :, k, :]
        self.dw = dw_mat.reshape(self.w.shape).astype(self.w.dtype, copy=False)
        self.db = grad.sum(axis=(0, 1)).astype(self.b.dtype, copy=False)
        return dx_pad[:, self.pad_left : self.pad_left + length, :]

    def param_items(self):
        return [("w", self.w), ("b", self.b)]

    def grad_items(self):
        return [("w", self.dw), ("b", self.db)]


class BatchNorm1d(Layer):
    """Per-channel normalization over (batch, length) with running stats."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.name = f"bn{channels}"
        self._cache = None

    def forward(self, x, train, rng):
        if x.ndim != 3 or x.shape[2] != self.channels:
            raise ShapeMismatch(f"{self.name}: expected [batch, length, {self.channels}], got {x.shape}")
        if train:
            mu = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))  # population variance over the batch
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            self.running_mean = (
                self.momentum * self.running_mean + (1.0 - self.momentum) * mu
            ).astype(self.running_mean.dtype)
            self.running_var = (
                self.momentum * self.running_var + (1.0 - self.momentum) * var
            ).astype(self.running_var.dtype)
            self._cache = (xhat, inv_std)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
            self._cache = None
        return (self.gamma * xhat + self.beta).astype(x.dtype, copy=False)

    def backward(self, grad):
        if self._cache is None:
            raise StaleCache(f"{self.name}: backward without a train-mode forward")
        xhat, inv_std = self._cache
        n = grad.shape[0] * grad.shape[1]
        self.dgamma = (grad * xhat).sum(axis=(0, 1)).astype(self.gamma.dtype, copy=False)
        self.dbeta = grad.sum(axis=(0, 1)).astype(self.beta.dtype, copy=False)
        dxhat = grad * self.gamma
        dx = (
            dxhat - dxhat.mean(axis=(0, 1)) - xhat * (dxhat * xhat).mean(axis=(0, 1))
        ) * inv_std
        return dx.astype(grad.dtype, copy=False)

    def param_items(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def grad_items(self):
        return [("gamma", self.dgamma), ("beta", self.dbeta)]

    def state_items(self):
        return self.param_items() + [
            ("running_mean", self.running_mean),
            ("running_var", self.running_var),
        ]


class Elu(Layer):
    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha
        self.name = "elu"
        self._cache = None

    def forward(self, x, train, rng):
        positive = x > 0
        out = np.where(positive, x, self.alpha * np.expm1(np.minimum(x, 0.0)))
        out = out.astype(x.dtype, copy=False)
        self._cache = (positive, out) if train else None
        return out

    def backward(self, grad):
        if self._cache is None:
            raise StaleCache("elu: backward without a train-mode forward")
        positive, out = self._cache
        return grad * np.where(positive, 1.0, out + self.alpha).astype(grad.dtype, copy=False)


class MaxPool1d(Layer):
    """Non-overlapping max pooling; the tail shorter than pool is dropped."""

    def __init__(self, pool: int):
        if pool < 1:
            raise ShapeMismatch("pool must be >= 1")
        self.pool = pool
        self.name = f"pool{pool}"
        self._cache = None

    def forward(self, x, train, rng):
        batch, length, channels = x.shape
        out_length = length // self.pool
        tiles = x[:, : out_length * self.pool, :].reshape(batch, out_length, self.pool, channels)
        argmax = tiles.argmax(axis=2)
        out = np.take_along_axis(tiles, argmax[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (argmax, length) if train else None
        return out

    def backward(self, grad):
        if self._cache is None:
            raise StaleCache(f"{self.name}: backward without a train-mode forward")
        argmax, length = self._cache
        batch, out_length, channels = grad.shape
        dtiles = np.zeros((batch, out_length, self.pool, channels), dtype=grad.dtype)
        np.put_along_axis(dtiles, argmax[:, :, None, :], grad[:, :, None, :], axis=2)
        dx = np.zeros((batch, length, channels), dtype=grad.dtype)
        dx[:, : out_length * self.pool, :] = dtiles.reshape(batch, out_length * self.pool, channels)
        return dx


class Dropout(Layer):
    """Inverted dropout; identity in eval mode and at rate 0."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ShapeMismatch("dropout rate must be in [0, 1)")
        self.rate = rate
        self.name = f"dropout{rate:g}"
        self._mask = None

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            self._mask = "identity" if train else None
            return x
        if rng is None:
            raise NnError("dropout in train mode needs an rng")
        self._mask = rng.random(x.shape) >= self.rate
        return (x * self._mask / (1.0 - self.rate)).astype(x.dtype, copy=False)

    def backward(self, grad):
        if self._mask is None:
            raise StaleCache(f"{self.name}: backward without a train-mode forward")
        if isinstance(self._mask, str):
            return grad
        return (grad * self._mask / (1.0 - self.rate)).astype(grad.dtype, copy=False)


class Flatten(Layer):
    name = "flatten"

    def __init__(self):
        self._shape = None

    def forward(self, x, train, rng):
        self._shape = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        if self._shape is None:
            raise StaleCache("flatten: backward without a train-mode forward")
        return grad.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng, dtype=np.float32):
        scale = 1.0 / np.sqrt(in_features)
        self.w = (rng.standard_normal((in_features, out_features)) * scale).astype(dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.name = f"dense{out_features}"
        self._x = None

    def forward(self, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ShapeMismatch(
                f"{self.name}: expected [batch, {self.w.shape[0]}], got {x.shape}"
            )
        self._x = x if train else None
        return x @ self.w + self.b

    def backward(self, grad):
        if self._x is None:
            raise StaleCache(f"{self.name}: backward without a train-mode forward")
        self.dw = (self._x.T @ grad).astype(self.w.dtype, copy=False)
        self.db = grad.sum(axis=0).astype(self.b.dtype, copy=False)
        return grad @ self.w.T

    def param_items(self):
        return [("w", self.w), ("b", self.b)]

    def grad_items(self):
        return [("w", self.dw), ("b", self.db)]


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_bce(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, float]:
    """Probabilities and mean binary cross-entropy, in log-sum-exp form.

    loss_i = max(z,0) - z*t + log(1 + exp(-|z|)) never evaluates log(0),
    so saturated logits are safe.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if z.shape != t.shape:
        raise ShapeMismatch(f"logits {z.shape} vs targets {t.shape}")
    probs = sigmoid(z)
    loss = float(np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))))
    return probs, loss
