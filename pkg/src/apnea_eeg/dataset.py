"""Labeled 210 s context windows, stratified splitting, and persistence.

A recording is cut into consecutive non-overlapping 30 s windows; each
emitted window carries 90 s of context on both sides (26,880 samples at
128 Hz) but its label depends only on events overlapping the central
30 s by strictly more than 10 s. Edge windows without full context are
dropped. Datasets persist as a JSON sidecar plus a raw float32 tensor.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .edf import ApneaEvent, EegRecording

log = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = "1"
SIDECAR_NAME = "dataset.json"
TENSOR_NAME = "dataset.f32"

# window_start_s used for rows that were synthesized rather than cut
# from a recording (see the resample module).
SYNTHETIC_START_S = -1.0


class DatasetError(Exception):
    pass


class RecordingTooShort(DatasetError):
    pass


class FormatVersionMismatch(DatasetError):
    pass


class SidecarTensorDisagreement(DatasetError):
    pass


@dataclass(frozen=True)
class WindowingConfig:
    window_s: float = 30.0
    context_s: float = 90.0
    min_overlap_s: float = 10.0
    fs: float = 128.0

    @property
    def span_s(self) -> float:
        return self.window_s + 2 * self.context_s

    @property
    def samples_per_window(self) -> int:
        return int(round(self.span_s * self.fs))

    def validate(self) -> None:
        if not self.window_s > self.min_overlap_s > 0:
            raise DatasetError("need window_s > min_overlap_s > 0")
        if self.context_s < 0:
            raise DatasetError("context_s must be non-negative")
        for name, value in (("window_s", self.window_s), ("context_s", self.context_s)):
            if abs(value * self.fs - round(value * self.fs)) > 1e-9:
                raise DatasetError(f"{name} must be a whole number of samples at fs={self.fs}")


@dataclass
class LabeledWindow:
    subject_id: str
    window_start_s: float  # start of the central window, not of the context
    label: int
    samples: np.ndarray


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise DatasetError("train_fraction must be in (0, 1)")


@dataclass
class DatasetSplit:
    train: list[LabeledWindow]
    valid: list[LabeledWindow]
    provenance: dict = field(default_factory=dict)


def overlap_s(start_s: float, end_s: float, event: ApneaEvent) -> float:
    return max(0.0, min(end_s, event.end_s) - max(start_s, event.onset_s))


def label_window(
    window_start_s: float,
    window_end_s: float,
    events: list[ApneaEvent],
    config: WindowingConfig,
) -> int:
    """1 iff some single event overlaps the window by more than min_overlap_s."""
    for event in events:
        if overlap_s(window_start_s, window_end_s, event) > config.min_overlap_s:
            return 1
    return 0


def build_windows(
    recording: EegRecording,
    events: list[ApneaEvent],
    config: WindowingConfig,
) -> list[LabeledWindow]:
    """Cut a preprocessed recording into labeled context windows."""
    config.validate()
    duration = recording.duration_s
    if duration < config.span_s:
        raise RecordingTooShort(
            f"recording is {duration:.1f} s, need at least {config.span_s:.1f} s"
        )
    window_n = int(round(config.window_s * config.fs))
    context_n = int(round(config.context_s * config.fs))
    span_n = window_n + 2 * context_n
    samples = np.asarray(recording.samples, dtype=np.float32)

    windows = []
    slice_start = 0
    while slice_start + span_n <= len(samples):
        center_start_s = (slice_start + context_n) / config.fs
        windows.append(
            LabeledWindow(
                subject_id=recording.subject_id,
                window_start_s=center_start_s,
                label=label_window(
                    center_start_s, center_start_s + config.window_s, events, config
                ),
                samples=samples[slice_start : slice_start + span_n].copy(),
            )
        )
        slice_start += window_n
    return windows


def stratified_split(windows: list[LabeledWindow], config: SplitConfig) -> DatasetSplit:
    """Deterministic per-class shuffle and proportional cut.

    Train size per class is round(train_fraction * class_count), halves
    rounding up. A class with no members logs a warning and contributes
    nothing.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    by_label: dict[int, list[int]] = {0: [], 1: []}
    for i, w in enumerate(windows):
        by_label.setdefault(int(w.label), []).append(i)

    train_idx: list[int] = []
    valid_idx: list[int] = []
    for label in sorted(by_label):
        members = np.array(by_label[label], dtype=np.int64)
        if members.size == 0:
            log.warning("class %d has no windows; split proceeds without it", label)
            continue
        rng.shuffle(members)
        n_train = int(np.floor(config.train_fraction * members.size + 0.5))
        train_idx.extend(members[:n_train].tolist())
        valid_idx.extend(members[n_train:].tolist())

    order = rng.permutation(len(train_idx))
    train = [windows[train_idx[i]] for i in order]
    valid = [windows[i] for i in valid_idx]
    provenance = {
        "seed": config.seed,
        "train_fraction": config.train_fraction,
        "n_train": len(train),
        "n_valid": len(valid),
    }
    return DatasetSplit(train=train, valid=valid, provenance=provenance)


def windows_to_arrays(windows: list[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (X [n, length] float32, y [n] int64)."""
    if not windows:
        return np.zeros((0, 0), dtype=np.float32), np.zeros(0, dtype=np.int64)
    X = np.stack([np.asarray(w.samples, dtype=np.float32) for w in windows])
    y = np.array([int(w.label) for w in windows], dtype=np.int64)
    return X, y


def save_dataset(
    windows: list[LabeledWindow], path, config: WindowingConfig | None = None
) -> None:
    """Write dataset.json + dataset.f32 into the directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    X, y = windows_to_arrays(windows)
    if windows:
        lengths = {len(w.samples) for w in windows}
        if len(lengths) != 1:
            raise DatasetError(f"window lengths differ: {sorted(lengths)}")
        window_length = lengths.pop()
    else:
        window_length = 0
    config = config or WindowingConfig()
    sidecar = {
        "format_version": DATASET_FORMAT_VERSION,
        "count": len(windows),
        "window_length": window_length,
        "fs": config.fs,
        "config": {
            "window_s": config.window_s,
            "context_s": config.context_s,
            "min_overlap_s": config.min_overlap_s,
            "fs": config.fs,
        },
        "labels": y.tolist(),
        "subject_ids": [w.subject_id for w in windows],
        "window_starts_s": [float(w.window_start_s) for w in windows],
    }
    (path / TENSOR_NAME).write_bytes(X.astype("<f4").tobytes())
    (path / SIDECAR_NAME).write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")


def load_sidecar(path) -> dict:
    return json.loads((Path(path) / SIDECAR_NAME).read_text())


def load_dataset(path) -> list[LabeledWindow]:
    """Inverse of save_dataset; floats round-trip bit-exactly."""
    path = Path(path)
    sidecar = load_sidecar(path)
    if sidecar.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"sidecar version {sidecar.get('format_version')!r}, "
            f"reader supports {DATASET_FORMAT_VERSION!r}"
        )
    count = sidecar["count"]
    length = sidecar["window_length"]
    blob = (path / TENSOR_NAME).read_bytes()
    if len(blob) != count * length * 4:
        raise SidecarTensorDisagreement(
            f"tensor file holds {len(blob)} bytes, sidecar implies {count * length * 4}"
        )
    X = np.frombuffer(blob, dtype="<f4").reshape(count, length)
    return [
        LabeledWindow(
            subject_id=sidecar["subject_ids"][i],
            window_start_s=sidecar["window_starts_s"][i],
            label=int(sidecar["labels"][i]),
            samples=X[i].copy(),
        )
        for i in range(count)
    ]
