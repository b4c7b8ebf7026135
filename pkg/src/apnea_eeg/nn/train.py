"""Training loop, per-epoch history, and finite-difference gradient checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .layers import sigmoid_bce
from .model import Model
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "valid_loss", "valid_acc", "valid_auc")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True
    threshold: float = 0.5

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _as_xy(data) -> tuple[np.ndarray, np.ndarray]:
    """Accept (X, y) arrays or a list of LabeledWindow."""
    if isinstance(data, tuple):
        X, y = data
        return np.asarray(X), np.asarray(y)
    from ..dataset import windows_to_arrays

    return windows_to_arrays(list(data))


def evaluate(model: Model, X: np.ndarray, y: np.ndarray, batch_size: int = 32) -> dict:
    """Eval-mode loss, accuracy at 0.5, and ROC-AUC (nan if one class)."""
    from ..metrics import SingleClass, roc_auc

    losses = []
    scores = np.empty(len(X), dtype=np.float64)
    for lo in range(0, len(X), batch_size):
        hi = min(lo + batch_size, len(X))
        logits = model.eval_forward(X[lo:hi])
        probs, loss = sigmoid_bce(logits, y[lo:hi])
        scores[lo:hi] = probs
        losses.append(loss * (hi - lo))
    loss = float(np.sum(losses) / len(X))
    acc = float(np.mean((scores >= 0.5).astype(np.int64) == y))
    try:
        _, auc = roc_auc(y, scores)
    except SingleClass:
        auc = float("nan")
    return {"loss": loss, "acc": acc, "auc": auc, "scores": scores}


def fit(model: Model, train_data, valid_data, config: TrainConfig) -> list[dict]:
    """Adam-train the model; returns one history row per epoch."""
    config.validate()
    X_train, y_train = _as_xy(train_data)
    X_valid, y_valid = _as_xy(valid_data)
    if len(X_train) == 0 or len(X_valid) == 0:
        raise ValueError("train and valid sets must be non-empty")

    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(model.param_arrays(), model.config.learning_rate)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X_train)) if config.shuffle else np.arange(len(X_train))
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            xb, yb = X_train[idx], y_train[idx]
            logits = model.train_forward(xb, rng)
            probs, loss = sigmoid_bce(logits, yb)
            model.backward_from_logits((probs - yb) / len(yb))
            adam_step(model.param_arrays(), model.grad_arrays(), state)
            epoch_loss += loss * len(yb)
            epoch_correct += int(np.sum((probs >= config.threshold).astype(np.int64) == yb))
        valid = evaluate(model, X_valid, y_valid, config.batch_size)
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / len(order),
            "train_acc": epoch_correct / len(order),
            "valid_loss": valid["loss"],
            "valid_acc": valid["acc"],
            "valid_auc": valid["auc"],
        }
        history.append(row)
        log.info(
            "epoch %d: train_loss=%.4f train_acc=%.3f valid_loss=%.4f valid_acc=%.3f valid_auc=%.3f",
            epoch, row["train_loss"], row["train_acc"],
            row["valid_loss"], row["valid_acc"], row["valid_auc"],
        )
    return history


def history_to_csv(history: list[dict]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(
            ",".join(
                str(row["epoch"]) if col == "epoch" else repr(float(row[col]))
                for col in HISTORY_COLUMNS
            )
        )
    return "\n".join(lines) + "\n"


def history_from_csv(text: str) -> list[dict]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != ",".join(HISTORY_COLUMNS):
        raise ValueError("unrecognized history CSV header")
    history = []
    for line in lines[1:]:
        cells = line.split(",")
        row = {col: (int(v) if col == "epoch" else float(v)) for col, v in zip(HISTORY_COLUMNS, cells)}
        history.append(row)
    return history


def gradient_check(
    model: Model,
    batch: np.ndarray,
    targets: np.ndarray,
    step: float = 1e-5,
    rng_seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The model should be built with dtype float64; float32 rounding alone
    would swamp the comparison. Dropout stays deterministic because every
    forward pass reuses an identically seeded generator. Entries where
    both gradients sit below 1e-6 are compared on that absolute scale
    instead: finite differences cannot resolve a structurally zero
    gradient (for example a conv bias that batch normalization cancels)
    beyond its own rounding noise.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient_check needs a float64 model")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)

    def loss_value() -> float:
        logits = model.train_forward(batch, np.random.default_rng(rng_seed))
        return sigmoid_bce(logits, targets)[1]

    logits = model.train_forward(batch, np.random.default_rng(rng_seed))
    probs, _ = sigmoid_bce(logits, targets)
    model.backward_from_logits((probs - targets) / len(targets))
    analytic = [g.copy() for g in model.grad_arrays()]

    worst = 0.0
    for values, grads in zip(model.param_arrays(), analytic):
        flat = values.reshape(-1)
        gflat = grads.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            h = step * max(1.0, abs(original))
            flat[i] = original + h
            plus = loss_value()
            flat[i] = original - h
            minus = loss_value()
            flat[i] = original
            fd = (plus - minus) / (2.0 * h)
            denom = max(abs(fd), abs(gflat[i]), 1e-6)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst
