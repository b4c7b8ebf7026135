"""Evaluation metrics for imbalanced binary classification.

Scalar metrics derive from confusion-matrix counts with explicit
zero-denominator conventions. ROC-AUC is computed twice, as the
trapezoidal area and as the tie-adjusted rank statistic, and the two
must agree; disagreement means a bug, not a judgment call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MetricsError(Exception):
    pass


class LengthMismatch(MetricsError):
    pass


class NonBinaryInput(MetricsError):
    pass


class SingleClass(MetricsError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass
class ScalarMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    kappa: float
    mcc_degenerate: bool = False
    kappa_degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mcc": self.mcc,
            "kappa": self.kappa,
            "flags": {
                "mcc_degenerate": self.mcc_degenerate,
                "kappa_degenerate": self.kappa_degenerate,
            },
        }


@dataclass
class RocCurve:
    thresholds: list[float]
    points: list[tuple[float, float]]  # (fpr, tpr), from (0,0) to (1,1)
    auc: float = 0.0


def confusion(y_true, y_pred) -> ConfusionMatrix:
    """Count the four cells; positive class is 1 (apnea)."""
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape:
        raise LengthMismatch(f"y_true {t.shape} vs y_pred {p.shape}")
    for name, arr in (("y_true", t), ("y_pred", p)):
        bad = np.setdiff1d(np.unique(arr), [0, 1])
        if bad.size:
            raise NonBinaryInput(f"{name} contains non-binary values {bad.tolist()}")
    t = t.astype(np.int64)
    p = p.astype(np.int64)
    return ConfusionMatrix(
        tp=int(np.sum((t == 1) & (p == 1))),
        fp=int(np.sum((t == 0) & (p == 1))),
        fn=int(np.sum((t == 1) & (p == 0))),
        tn=int(np.sum((t == 0) & (p == 0))),
    )


def scalar_metrics(cm: ConfusionMatrix) -> ScalarMetrics:
    """Accuracy, precision, recall, F1, MCC, and Cohen's kappa.

    MCC and kappa fall back to 0 with a degenerate flag when their
    denominators vanish; precision and recall fall back to 0 silently.
    """
    tp, fp, fn, tn = cm.tp, cm.fp, cm.fn, cm.tn
    total = cm.total
    if total <= 0:
        raise MetricsError("confusion matrix is empty")

    accuracy = (tp + tn) / total
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    mcc_den = float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc_degenerate = mcc_den == 0.0
    mcc = 0.0 if mcc_degenerate else (tp * tn - fp * fn) / np.sqrt(mcc_den)

    p_yes = (tp + fp) / total * (tp + fn) / total
    p_no = (fn + tn) / total * (fp + tn) / total
    p_expected = p_yes + p_no
    kappa_degenerate = abs(1.0 - p_expected) < 1e-15
    kappa = 0.0 if kappa_degenerate else (accuracy - p_expected) / (1.0 - p_expected)

    return ScalarMetrics(
        accuracy=float(accuracy),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        mcc=float(mcc),
        kappa=float(kappa),
        mcc_degenerate=mcc_degenerate,
        kappa_degenerate=kappa_degenerate,
    )


def roc_auc(y_true, scores) -> tuple[RocCurve, float]:
    """ROC curve over unique-score thresholds plus the area under it.

    The trapezoidal area and the Mann-Whitney pair statistic (ties count
    half) are both computed and cross-checked to 1e-9.
    """
    t = np.asarray(y_true).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if t.shape != s.shape:
        raise LengthMismatch(f"y_true {t.shape} vs scores {s.shape}")
    n_pos = int(np.sum(t == 1))
    n_neg = int(np.sum(t == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} positive / {n_neg} negative")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    t_sorted = t[order]
    thresholds = [float("inf")]
    points = [(0.0, 0.0)]
    tp = fp = 0
    for i in range(len(s_sorted)):
        if t_sorted[i] == 1:
            tp += 1
        else:
            fp += 1
        last_of_threshold = i + 1 == len(s_sorted) or s_sorted[i + 1] != s_sorted[i]
        if last_of_threshold:
            thresholds.append(float(s_sorted[i]))
            points.append((fp / n_neg, tp / n_pos))
    thresholds.append(float("-inf"))
    points.append((1.0, 1.0))

    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y1 + y0) / 2.0

    pair_auc = _rank_auc(t, s, n_pos, n_neg)
    if abs(area - pair_auc) > 1e-9:
        raise MetricsError(
            f"trapezoidal AUC {area!r} disagrees with pair statistic {pair_auc!r}"
        )
    return RocCurve(thresholds=thresholds, points=points, auc=float(area)), float(area)


def _rank_auc(t: np.ndarray, s: np.ndarray, n_pos: int, n_neg: int) -> float:
    """Mann-Whitney AUC via average ranks (tie groups share their mean rank)."""
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # 1-based average rank
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[t == 1]))
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_to_csv(curve: RocCurve) -> str:
    lines = ["threshold,fpr,tpr"]
    for thr, (fpr, tpr) in zip(curve.thresholds, curve.points):
        lines.append(f"{thr!r},{fpr!r},{tpr!r}")
    return "\n".join(lines) + "\n"


REPORT_VERSION = "1"


def emit_report(
    metrics: ScalarMetrics,
    cm: ConfusionMatrix,
    path,
    roc: RocCurve | None = None,
    history: list[dict] | None = None,
) -> list[Path]:
    """Write report.json plus roc.csv/history.csv and SVG plots when available."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []

    report = {
        "report_version": REPORT_VERSION,
        "confusion_matrix": cm.to_dict(),
        "metrics": metrics.to_dict(),
    }
    if roc is not None:
        report["roc_auc"] = roc.auc
    target = path / "report.json"
    target.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    written.append(target)

    plots = path / "plots"
    plots.mkdir(exist_ok=True)
    target = plots / "confusion.svg"
    target.write_text(_confusion_svg(cm))
    written.append(target)

    if roc is not None:
        target = path / "roc.csv"
        target.write_text(roc_to_csv(roc))
        written.append(target)
        target = plots / "roc.svg"
        target.write_text(_line_svg(
            [p[0] for p in roc.points], [[p[1] for p in roc.points]],
            ["tpr"], "false positive rate", "true positive rate",
        ))
        written.append(target)

    if history:
        from .nn.train import history_to_csv

        target = path / "history.csv"
        target.write_text(history_to_csv(history))
        written.append(target)
        epochs = [row["epoch"] for row in history]
        target = plots / "accuracy.svg"
        target.write_text(_line_svg(
            epochs,
            [[row["train_acc"] for row in history], [row["valid_acc"] for row in history]],
            ["train_acc", "valid_acc"], "epoch", "accuracy",
        ))
        written.append(target)
    return written


_SVG_W, _SVG_H, _SVG_PAD = 480, 360, 48
_SVG_COLORS = ("#1f6fb2", "#d95f02", "#2ca02c")


def _svg_open(x_label: str, y_label: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W / 2:g}" y="{_SVG_H - 8}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="14" y="{_SVG_H / 2:g}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_SVG_H / 2:g})">{y_label}</text>',
    ]


def _line_svg(xs, series, labels, x_label, y_label) -> str:
    xs = [float(x) for x in xs]
    finite = [v for ys in series for v in ys if np.isfinite(v)]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return _SVG_PAD + (x - x_lo) / (x_hi - x_lo) * (_SVG_W - 2 * _SVG_PAD)

    def sy(y):
        return _SVG_H - _SVG_PAD - (y - y_lo) / (y_hi - y_lo) * (_SVG_H - 2 * _SVG_PAD)

    parts = _svg_open(x_label, y_label)
    parts.append(
        f'<rect x="{_SVG_PAD}" y="{_SVG_PAD}" width="{_SVG_W - 2 * _SVG_PAD}" '
        f'height="{_SVG_H - 2 * _SVG_PAD}" fill="none" stroke="#888"/>'
    )
    for i, (ys, label) in enumerate(zip(series, labels)):
        pts = " ".join(
            f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(y)
        )
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{_SVG_W - _SVG_PAD}" y="{_SVG_PAD + 14 * (i + 1)}" '
            f'text-anchor="end" font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _confusion_svg(cm: ConfusionMatrix) -> str:
    cells = [("TN", cm.tn), ("FP", cm.fp), ("FN", cm.fn), ("TP", cm.tp)]
    peak = max(1, max(v for _, v in cells))
    parts = _svg_open("predicted", "actual")
    size = (min(_SVG_W, _SVG_H) - 2 * _SVG_PAD) / 2
    for i, (name, value) in enumerate(cells):
        row, col = divmod(i, 2)
        x = _SVG_PAD + col * size
        y = _SVG_PAD + row * size
        shade = int(255 - 160 * (value / peak))
        parts.append(
            f'<rect x="{x:g}" y="{y:g}" width="{size:g}" height="{size:g}" '
            f'fill="rgb({shade},{shade},255)" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{x + size / 2:g}" y="{y + size / 2:g}" text-anchor="middle" '
            f'font-size="14">{name}={value}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
