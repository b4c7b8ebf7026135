"""Pipeline orchestration as subcommands.

Stages write their outputs under a work directory and record config and
input/output hashes in manifest.json, so any stage can be rerun
idempotently and a run-all is byte-identical to running the stages one
by one. One top-level seed fans out to per-stage seeds through a fixed
counter scheme: stage_seed = seed * 10000 + {synth: 1, split: 2,
resample: 3, train: 4}.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import dsp, edf, metrics, nn, resample, synth

log = logging.getLogger("apnea_eeg")

STAGE_SEED_COUNTERS = {"synth": 1, "split": 2, "resample": 3, "train": 4}

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class CliError(Exception):
    """Data or configuration failure attributable to a stage."""


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    workdir: str = "."
    edf_path: str | None = None
    events_path: str | None = None
    channel: str = "C3-A2"
    subject_id: str | None = None
    preprocess: dsp.PreprocessConfig = dataclasses.field(default_factory=dsp.PreprocessConfig)
    windowing: ds.WindowingConfig = dataclasses.field(default_factory=ds.WindowingConfig)
    split: ds.SplitConfig | None = None
    resample: resample.ResampleConfig | None = None
    model: nn.ModelConfig = dataclasses.field(default_factory=nn.ModelConfig)
    train: nn.TrainConfig | None = None
    synth: synth.SynthConfig | None = None
    threshold: float = 0.5

    def stage_seed(self, stage: str) -> int:
        return self.seed * 10_000 + STAGE_SEED_COUNTERS[stage]

    def resolved(self) -> "RunConfig":
        """Fill stage configs whose seeds derive from the top-level seed."""
        out = dataclasses.replace(self)
        if out.split is None:
            out.split = ds.SplitConfig(seed=self.stage_seed("split"))
        if out.resample is None:
            out.resample = resample.ResampleConfig(seed=self.stage_seed("resample"))
        if out.train is None:
            out.train = nn.TrainConfig(seed=self.stage_seed("train"))
        if out.synth is None:
            out.synth = synth.SynthConfig(seed=self.stage_seed("synth"))
        return out

    def to_dict(self) -> dict:
        resolved = self.resolved()
        return {
            "seed": resolved.seed,
            "workdir": str(resolved.workdir),
            "edf_path": resolved.edf_path,
            "events_path": resolved.events_path,
            "channel": resolved.channel,
            "subject_id": resolved.subject_id,
            "threshold": resolved.threshold,
            "preprocess": {
                "fs": resolved.preprocess.fs,
                "order": resolved.preprocess.order,
                "bands": [[b.name, b.low_hz, b.high_hz] for b in resolved.preprocess.bands],
            },
            "windowing": dataclasses.asdict(resolved.windowing),
            "split": dataclasses.asdict(resolved.split),
            "resample": dataclasses.asdict(resolved.resample),
            "model": resolved.model.to_dict(),
            "train": dataclasses.asdict(resolved.train),
            "synth": dataclasses.asdict(resolved.synth),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        out = cls(seed=data.get("seed", 0))
        for key in ("workdir", "edf_path", "events_path", "channel", "subject_id", "threshold"):
            if key in data:
                setattr(out, key, data[key])
        if "preprocess" in data:
            p = dict(data["preprocess"])
            bands = tuple(
                dsp.BandDefinition(name, float(lo), float(hi))
                for name, lo, hi in p.pop("bands", [[b.name, b.low_hz, b.high_hz] for b in dsp.DEFAULT_BANDS])
            )
            out.preprocess = dsp.PreprocessConfig(bands=bands, **p)
        if "windowing" in data:
            out.windowing = ds.WindowingConfig(**data["windowing"])
        if "split" in data:
            out.split = ds.SplitConfig(**data["split"])
        if "resample" in data:
            out.resample = resample.ResampleConfig(**data["resample"])
        if "model" in data:
            out.model = nn.ModelConfig.from_dict(data["model"])
        if "train" in data:
            out.train = nn.TrainConfig(**data["train"])
        if "synth" in data:
            out.synth = synth.SynthConfig(**data["synth"])
        return out


def _config_hash(config: RunConfig) -> str:
    """Hash of the semantic configuration; input identity is carried by the
    per-file hashes, so filesystem paths stay out of this digest."""
    data = config.to_dict()
    for key in ("workdir", "edf_path", "events_path"):
        data.pop(key, None)
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _relative(path: Path, workdir: Path) -> str:
    try:
        return str(path.resolve().relative_to(workdir.resolve()))
    except ValueError:
        return str(path.resolve())


def _record_stage(workdir: Path, stage: str, config: RunConfig,
                  inputs: list[Path], outputs: list[Path]) -> None:
    manifest_path = workdir / "manifest.json"
    manifest = {"manifest_version": "1", "stages": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    manifest["stages"][stage] = {
        "config_sha256": _config_hash(config),
        "inputs": {_relative(p, workdir): _file_hash(p) for p in sorted(inputs)},
        "outputs": {_relative(p, workdir): _file_hash(p) for p in sorted(outputs)},
    }
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------- stages

def stage_synth(config: RunConfig) -> tuple[Path, Path]:
    config = config.resolved()
    workdir = Path(config.workdir)
    out_dir = workdir / "synthetic"
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = synth.generate_corpus(config.synth)
    edf_path = out_dir / "recording.edf"
    events_path = out_dir / "events.csv"
    edf_path.write_bytes(corpus.edf_bytes)
    events_path.write_text(corpus.events_csv)
    _record_stage(workdir, "synth", config, [], [edf_path, events_path])
    log.info("synth: wrote %s (%d events)", edf_path, len(corpus.events))
    return edf_path, events_path


def stage_preprocess(config: RunConfig) -> Path:
    config = config.resolved()
    if not config.edf_path or not config.events_path:
        raise CliError("preprocess needs --edf and --events")
    workdir = Path(config.workdir)
    edf_path = Path(config.edf_path)
    events_path = Path(config.events_path)

    header, signals = edf.parse_edf(edf_path.read_bytes())
    recording = edf.extract_channel(header, signals, config.channel, config.subject_id)
    events, skipped = edf.parse_events(
        events_path.read_text(), start_datetime=header.start_datetime
    )
    if skipped:
        log.warning("preprocess: skipped %d annotation lines", skipped)

    processed = dsp.preprocess_recording(recording, config.preprocess)

    out_dir = workdir / "preprocessed"
    out_dir.mkdir(parents=True, exist_ok=True)
    subject = processed.subject_id
    tensor_path = out_dir / f"{subject}.f32"
    sidecar_path = out_dir / f"{subject}.json"
    events_out = out_dir / f"{subject}.events.csv"
    tensor_path.write_bytes(processed.samples.astype("<f4").tobytes())
    sidecar_path.write_text(json.dumps({
        "subject_id": subject,
        "channel_label": processed.channel_label,
        "fs": processed.fs,
        "n_samples": int(len(processed.samples)),
        "skipped_annotation_lines": skipped,
    }, sort_keys=True, indent=1) + "\n")
    events_out.write_text(edf.events_to_csv(events))
    _record_stage(workdir, "preprocess", config, [edf_path, events_path],
                  [tensor_path, sidecar_path, events_out])
    log.info("preprocess: %s -> %d samples at %g Hz", subject, len(processed.samples), processed.fs)
    return out_dir


def _load_preprocessed(workdir: Path) -> list[tuple[edf.EegRecording, list[edf.ApneaEvent], list[Path]]]:
    pre_dir = workdir / "preprocessed"
    sidecars = sorted(pre_dir.glob("*.json"))
    if not sidecars:
        raise CliError(f"no preprocessed recordings under {pre_dir}; run preprocess first")
    out = []
    for sidecar_path in sidecars:
        meta = json.loads(sidecar_path.read_text())
        subject = meta["subject_id"]
        tensor_path = pre_dir / f"{subject}.f32"
        events_path = pre_dir / f"{subject}.events.csv"
        samples = np.frombuffer(tensor_path.read_bytes(), dtype="<f4").astype(np.float64)
        if len(samples) != meta["n_samples"]:
            raise CliError(f"{tensor_path} length disagrees with its sidecar")
        recording = edf.EegRecording(
            samples=samples, fs=meta["fs"],
            channel_label=meta["channel_label"], subject_id=subject,
        )
        events, _ = edf.parse_events(events_path.read_text())
        out.append((recording, events, [tensor_path, sidecar_path, events_path]))
    return out


def stage_build_dataset(config: RunConfig) -> tuple[Path, Path]:
    config = config.resolved()
    workdir = Path(config.workdir)
    windows: list[ds.LabeledWindow] = []
    inputs: list[Path] = []
    for recording, events, paths in _load_preprocessed(workdir):
        windows.extend(ds.build_windows(recording, events, config.windowing))
        inputs.extend(paths)
    split = ds.stratified_split(windows, config.split)

    train_dir = workdir / "dataset" / "train"
    valid_dir = workdir / "dataset" / "valid"
    ds.save_dataset(split.train, train_dir, config.windowing)
    ds.save_dataset(split.valid, valid_dir, config.windowing)
    split_path = workdir / "dataset" / "split.json"
    split_path.write_text(json.dumps(split.provenance, sort_keys=True, indent=1) + "\n")
    outputs = [train_dir / ds.SIDECAR_NAME, train_dir / ds.TENSOR_NAME,
               valid_dir / ds.SIDECAR_NAME, valid_dir / ds.TENSOR_NAME, split_path]
    _record_stage(workdir, "build-dataset", config, inputs, outputs)
    log.info("build-dataset: %d train / %d valid windows", len(split.train), len(split.valid))
    return train_dir, valid_dir


def stage_balance(config: RunConfig) -> Path:
    config = config.resolved()
    workdir = Path(config.workdir)
    train_dir = workdir / "dataset" / "train"
    windows = ds.load_dataset(train_dir)
    X, y = ds.windows_to_arrays(windows)
    X_out, y_out, report = resample.smote_tomek(X, y, config.resample)

    # Rows in X_out are the kept members of [originals..., synthetics...];
    # recover per-row metadata from that ordering.
    n_original = len(windows)
    removed = set(report.removed_indices)
    kept = [i for i in range(n_original + report.n_synthetic) if i not in removed]
    balanced: list[ds.LabeledWindow] = []
    for row, combined_index in enumerate(kept):
        label = int(y_out[row])
        if combined_index < n_original:
            w = windows[combined_index]
            balanced.append(ds.LabeledWindow(w.subject_id, w.window_start_s, label, X_out[row]))
        else:
            balanced.append(ds.LabeledWindow("smote", ds.SYNTHETIC_START_S, label, X_out[row]))

    out_dir = workdir / "dataset" / "train_balanced"
    ds.save_dataset(balanced, out_dir, config.windowing)
    report_path = workdir / "resample_report.json"
    report_path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    outputs = [out_dir / ds.SIDECAR_NAME, out_dir / ds.TENSOR_NAME, report_path]
    inputs = [train_dir / ds.SIDECAR_NAME, train_dir / ds.TENSOR_NAME]
    _record_stage(workdir, "balance", config, inputs, outputs)
    log.info("balance: %d -> %d rows (+%d synthetic, %d links)",
             n_original, len(balanced), report.n_synthetic, report.n_links_removed)
    return out_dir


def _training_dir(workdir: Path, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    balanced = workdir / "dataset" / "train_balanced"
    return balanced if balanced.exists() else workdir / "dataset" / "train"


def stage_train(config: RunConfig, dataset_dir: str | None = None) -> Path:
    config = config.resolved()
    workdir = Path(config.workdir)
    train_dir = _training_dir(workdir, dataset_dir)
    valid_dir = workdir / "dataset" / "valid"
    train_windows = ds.load_dataset(train_dir)
    valid_windows = ds.load_dataset(valid_dir)
    if not train_windows or not valid_windows:
        raise CliError("train and valid datasets must be non-empty")

    input_length = len(train_windows[0].samples)
    model = nn.build_model(config.model, input_length=input_length, seed=config.train.seed)
    history = nn.fit(model, train_windows, valid_windows, config.train)

    ckpt_path = workdir / "model.ckpt"
    history_path = workdir / "history.csv"
    nn.save_checkpoint(model, ckpt_path)
    history_path.write_text(nn.history_to_csv(history))
    inputs = [train_dir / ds.SIDECAR_NAME, train_dir / ds.TENSOR_NAME,
              valid_dir / ds.SIDECAR_NAME, valid_dir / ds.TENSOR_NAME]
    _record_stage(workdir, "train", config, inputs, [ckpt_path, history_path])
    log.info("train: %d epochs on %d windows -> %s", len(history), len(train_windows), ckpt_path)
    return ckpt_path


def stage_evaluate(config: RunConfig) -> Path:
    config = config.resolved()
    workdir = Path(config.workdir)
    ckpt_path = workdir / "model.ckpt"
    valid_dir = workdir / "dataset" / "valid"
    model = nn.load_checkpoint(ckpt_path)
    valid_windows = ds.load_dataset(valid_dir)
    X, y = ds.windows_to_arrays(valid_windows)

    scores = np.empty(len(X), dtype=np.float64)
    for lo in range(0, len(X), config.train.batch_size):
        hi = min(lo + config.train.batch_size, len(X))
        scores[lo:hi] = nn.forward(model, X[lo:hi])
    y_pred = (scores >= config.threshold).astype(np.int64)

    cm = metrics.confusion(y, y_pred)
    scalars = metrics.scalar_metrics(cm)
    roc = None
    try:
        roc, _ = metrics.roc_auc(y, scores)
    except metrics.SingleClass:
        log.warning("evaluate: single-class validation set, no ROC curve")

    history = None
    history_path = workdir / "history.csv"
    if history_path.exists():
        history = nn.history_from_csv(history_path.read_text())
    written = metrics.emit_report(scalars, cm, workdir, roc=roc, history=history)
    inputs = [ckpt_path, valid_dir / ds.SIDECAR_NAME, valid_dir / ds.TENSOR_NAME]
    if history_path.exists():
        inputs.append(history_path)
    _record_stage(workdir, "evaluate", config, inputs, written)
    log.info("evaluate: accuracy=%.4f mcc=%.4f", scalars.accuracy, scalars.mcc)
    return workdir / "report.json"


def run_metrics(args) -> int:
    order = [c.strip() for c in args.order.split(",")]
    if sorted(order) != ["fn", "fp", "tn", "tp"]:
        raise CliError(f"--order must name tp,fp,fn,tn exactly once, got {args.order!r}")
    try:
        values = [int(v) for v in args.confusion.split(",")]
    except ValueError:
        raise CliError(f"--confusion must be four integers, got {args.confusion!r}") from None
    if len(values) != 4 or any(v < 0 for v in values):
        raise CliError(f"--confusion must be four non-negative integers, got {args.confusion!r}")
    cm = metrics.ConfusionMatrix(**dict(zip(order, values)))
    scalars = metrics.scalar_metrics(cm)
    for name in ("accuracy", "precision", "recall", "f1", "mcc", "kappa"):
        print(f"{name} {getattr(scalars, name):.4f}")
    degenerate = [n for n, flag in (("mcc", scalars.mcc_degenerate),
                                    ("kappa", scalars.kappa_degenerate)) if flag]
    if degenerate:
        print("degenerate " + ",".join(degenerate))
    if args.out:
        metrics.emit_report(scalars, cm, Path(args.out))
    return EXIT_OK


def stage_run_all(config: RunConfig, synthetic: bool) -> Path:
    config = config.resolved()
    if synthetic:
        edf_path, events_path = stage_synth(config)
        config = dataclasses.replace(config, edf_path=str(edf_path), events_path=str(events_path))
    stage_preprocess(config)
    stage_build_dataset(config)
    stage_balance(config)
    stage_train(config)
    return stage_evaluate(config)


# ------------------------------------------------------------- argparse

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workdir", default=None, help="work directory (or APNEA_WORKDIR)")
    p.add_argument("--config", default=None, help="JSON run configuration file")
    p.add_argument("--seed", type=int, default=None, help="top-level seed")
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="apnea-eeg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic EDF + events corpus")
    _add_common(p)
    p.add_argument("--duration-s", type=float, default=None)
    p.add_argument("--n-events", type=int, default=None)
    p.add_argument("--event-duration-s", type=float, default=None)

    p = sub.add_parser("preprocess", help="EDF -> filtered, normalized recording")
    _add_common(p)
    p.add_argument("--edf", default=None)
    p.add_argument("--events", default=None)
    p.add_argument("--channel", default=None)
    p.add_argument("--subject-id", default=None)

    p = sub.add_parser("build-dataset", help="windows, labels, stratified split")
    _add_common(p)

    p = sub.add_parser("balance", help="SMOTE-Tomek the training split")
    _add_common(p)

    p = sub.add_parser("train", help="train the CNN")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--dataset", default=None, help="training dataset directory override")

    p = sub.add_parser("evaluate", help="checkpoint + validation set -> report")
    _add_common(p)
    p.add_argument("--threshold", type=float, default=None)

    p = sub.add_parser("metrics", help="scalar metrics from confusion counts")
    _add_common(p)
    p.add_argument("--confusion", required=True, help="four comma-separated counts")
    p.add_argument("--order", default="tp,fp,fn,tn", help="names for the four counts")
    p.add_argument("--out", default=None, help="also write report.json here")

    p = sub.add_parser("run-all", help="all stages in order")
    _add_common(p)
    p.add_argument("--edf", default=None)
    p.add_argument("--events", default=None)
    p.add_argument("--channel", default=None)
    p.add_argument("--subject-id", default=None)
    p.add_argument("--synthetic", action="store_true", help="generate the corpus first")
    p.add_argument("--epochs", type=int, default=None)
    return parser


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        config = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        config = RunConfig()
    workdir = getattr(args, "workdir", None) or os.environ.get("APNEA_WORKDIR")
    if workdir:
        config.workdir = workdir
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
        # a fresh top seed re-derives the stage seeds
        config.split = config.resample = config.train = config.synth = None
    for attr, key in (("edf", "edf_path"), ("events", "events_path"),
                      ("channel", "channel"), ("subject_id", "subject_id"),
                      ("threshold", "threshold")):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(config, key, value)
    resolved = config.resolved()
    if getattr(args, "duration_s", None) is not None:
        resolved.synth = dataclasses.replace(resolved.synth, duration_s=args.duration_s)
    if getattr(args, "n_events", None) is not None:
        resolved.synth = dataclasses.replace(resolved.synth, n_events=args.n_events)
    if getattr(args, "event_duration_s", None) is not None:
        resolved.synth = dataclasses.replace(resolved.synth, event_duration_s=args.event_duration_s)
    if getattr(args, "epochs", None) is not None:
        resolved.train = dataclasses.replace(resolved.train, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        resolved.train = dataclasses.replace(resolved.train, batch_size=args.batch_size)
    return resolved


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "metrics":
            return run_metrics(args)
        config = _load_config(args)
        Path(config.workdir).mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            stage_synth(config)
        elif args.command == "preprocess":
            stage_preprocess(config)
        elif args.command == "build-dataset":
            stage_build_dataset(config)
        elif args.command == "balance":
            stage_balance(config)
        elif args.command == "train":
            stage_train(config, dataset_dir=args.dataset)
        elif args.command == "evaluate":
            stage_evaluate(config)
        elif args.command == "run-all":
            if not args.synthetic and not (config.edf_path and config.events_path):
                raise CliError("run-all needs --synthetic or both --edf and --events")
            stage_run_all(config, synthetic=args.synthetic)
        return EXIT_OK
    except SystemExit:
        raise
    except (CliError, edf.EdfError, dsp.DspError, ds.DatasetError,
            resample.ResampleError, metrics.MetricsError, nn.NnError,
            synth.SynthError, nn.ConfigInvalid, FileNotFoundError,
            json.JSONDecodeError, ValueError) as exc:
        stage = getattr(args, "command", "cli")
        sys.stderr.write(f"apnea-eeg {stage}: error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
