"""Model assembly: four conv blocks, a dense head, and a sigmoid output.

Each conv block is conv -> batchnorm -> ELU -> maxpool -> dropout; the
head is flatten -> dense -> ELU -> dropout -> dense(1). The default
configuration matches the published hyperparameter table exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    Elu,
    Flatten,
    Layer,
    MaxPool1d,
    NonFiniteActivation,
    ShapeMismatch,
    StaleCache,
    sigmoid,
)

DEFAULT_INPUT_LENGTH = 26_880  # 210 s at 128 Hz


class ConfigInvalid(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    conv_blocks: tuple[tuple[int, int], ...] = ((8, 35), (128, 175), (16, 175), (32, 3))
    pool_sizes: tuple[int, ...] = (7, 7, 7, 2)
    conv_dropout: float = 0.1
    dense_units: int = 64
    dense_dropout: float = 0.0
    learning_rate: float = 0.0015
    elu_alpha: float = 1.0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def validate(self) -> None:
        if len(self.conv_blocks) != len(self.pool_sizes):
            raise ConfigInvalid("one pool size per conv block required")
        if not self.conv_blocks:
            raise ConfigInvalid("at least one conv block required")
        for filters, kernel in self.conv_blocks:
            if filters < 1 or kernel < 1:
                raise ConfigInvalid(f"bad conv block ({filters}, {kernel})")
        if any(p < 1 for p in self.pool_sizes):
            raise ConfigInvalid("pool sizes must be >= 1")
        for name, rate in (("conv_dropout", self.conv_dropout), ("dense_dropout", self.dense_dropout)):
            if not 0.0 <= rate < 1.0:
                raise ConfigInvalid(f"{name} must be in [0, 1)")
        if self.dense_units < 1:
            raise ConfigInvalid("dense_units must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigInvalid("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "conv_blocks": [list(b) for b in self.conv_blocks],
            "pool_sizes": list(self.pool_sizes),
            "conv_dropout": self.conv_dropout,
            "dense_units": self.dense_units,
            "dense_dropout": self.dense_dropout,
            "learning_rate": self.learning_rate,
            "elu_alpha": self.elu_alpha,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        kwargs = dict(data)
        if "conv_blocks" in kwargs:
            kwargs["conv_blocks"] = tuple(tuple(b) for b in kwargs["conv_blocks"])
        if "pool_sizes" in kwargs:
            kwargs["pool_sizes"] = tuple(kwargs["pool_sizes"])
        return cls(**kwargs)


def shape_walk(config: ModelConfig, input_length: int) -> list[int]:
    """Post-pool lengths per block (floor division by each pool size)."""
    lengths = []
    length = input_length
    for pool in config.pool_sizes:
        length = length // pool
        lengths.append(length)
    return lengths


def flatten_width(config: ModelConfig, input_length: int) -> int:
    return shape_walk(config, input_length)[-1] * config.conv_blocks[-1][0]


def parameter_count(model: "Model") -> int:
    return sum(p.size for _, p in model.param_items())


class Model:
    def __init__(self, config: ModelConfig, layers: list[Layer], input_length: int, dtype):
        self.config = config
        self.layers = layers
        self.input_length = input_length
        self.dtype = np.dtype(dtype)
        self._cache_shape: tuple | None = None
        self._cache_logits: np.ndarray | None = None

    def train_forward(self, batch: np.ndarray, rng) -> np.ndarray:
        return self._forward(batch, train=True, rng=rng)

    def eval_forward(self, batch: np.ndarray) -> np.ndarray:
        return self._forward(batch, train=False, rng=None)

    def _forward(self, batch: np.ndarray, train: bool, rng) -> np.ndarray:
        x = np.asarray(batch, dtype=self.dtype)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[1] != self.input_length:
            raise ShapeMismatch(
                f"expected [batch, {self.input_length}] input, got {np.asarray(batch).shape}"
            )
        for index, layer in enumerate(self.layers):
            x = layer.forward(x, train, rng)
            if not np.all(np.isfinite(x)):
                raise NonFiniteActivation(f"layer {index} ({layer.name}) produced non-finite values")
        logits = x.reshape(-1)  # one logit per sample
        if train:
            self._cache_shape = np.asarray(batch).shape
            self._cache_logits = logits
        else:
            self._cache_shape = None
            self._cache_logits = None
        return logits

    def backward_from_logits(self, dlogits: np.ndarray) -> None:
        """Backpropagate d(loss)/d(logits) through every layer."""
        if self._cache_shape is None:
            raise StaleCache("backward without a matching train-mode forward")
        grad = np.asarray(dlogits, dtype=self.dtype).reshape(-1, 1)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, value in layer.param_items():
                out.append((f"{i}.{layer.name}.{name}", value))
        return out

    def grad_items(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, value in layer.grad_items():
                out.append((f"{i}.{layer.name}.{name}", value))
        return out

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, value in layer.state_items():
                out.append((f"{i}.{layer.name}.{name}", value))
        return out

    def param_arrays(self) -> list[np.ndarray]:
        return [p for _, p in self.param_items()]

    def grad_arrays(self) -> list[np.ndarray]:
        return [g for _, g in self.grad_items()]


def build_model(
    config: ModelConfig,
    input_length: int = DEFAULT_INPUT_LENGTH,
    seed: int = 0,
    dtype=np.float32,
) -> Model:
    """Instantiate the layer stack with fan-in-scaled random weights."""
    config.validate()
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    channels = 1
    length = input_length
    for (filters, kernel), pool in zip(config.conv_blocks, config.pool_sizes):
        layers.append(Conv1d(channels, filters, kernel, rng, dtype=dtype))
        layers.append(BatchNorm1d(filters, config.bn_momentum, config.bn_eps, dtype=dtype))
        layers.append(Elu(config.elu_alpha))
        layers.append(MaxPool1d(pool))
        layers.append(Dropout(config.conv_dropout))
        channels = filters
        length = length // pool
        if length < 1:
            raise ConfigInvalid(
                f"input length {input_length} pools down to nothing at pool {pool}"
            )
    layers.append(Flatten())
    layers.append(Dense(length * channels, config.dense_units, rng, dtype=dtype))
    layers.append(Elu(config.elu_alpha))
    layers.append(Dropout(config.dense_dropout))
    layers.append(Dense(config.dense_units, 1, rng, dtype=dtype))
    return Model(config, layers, input_length, dtype)


def forward(model: Model, batch: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
    """Class-1 probabilities for a batch (train mode consumes rng for dropout)."""
    logits = model.train_forward(batch, rng) if train else model.eval_forward(batch)
    return sigmoid(logits)


def backward(model: Model, batch: np.ndarray, targets: np.ndarray) -> float:
    """Gradients of the mean BCE loss; requires a prior train-mode forward.

    Returns the loss value for convenience; gradients land on the layers
    and are readable through model.grad_items().
    """
    if model._cache_logits is None or model._cache_shape != np.asarray(batch).shape:
        raise StaleCache("backward does not match the cached train-mode forward")
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if t.shape != model._cache_logits.shape:
        raise ShapeMismatch(f"targets {t.shape} vs logits {model._cache_logits.shape}")
    from .layers import sigmoid_bce

    probs, loss = sigmoid_bce(model._cache_logits, t)
    model.backward_from_logits((probs - t) / len(t))
    return loss
