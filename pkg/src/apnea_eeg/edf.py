"""EDF polysomnography ingestion.

Reads the classic EDF subset used by the St. Vincent's .rec files: a
256-byte fixed header, 256 bytes of per-signal header fields, and
contiguous data records of 16-bit little-endian samples. Also parses
respiratory-event annotation files (CSV or clock-time lines) and can
write EDF bytes back out for fixtures, with ``parse_edf(write_edf(h, s))``
returning the inputs bit-exactly.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

EVENT_KINDS = ("APNEA-O", "APNEA-C", "APNEA-M", "HYP-O", "HYP-C", "HYP-M")

# (name, width) of the fixed part of the header, in file order.
_FIXED_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration_s", 8),
    ("n_signals", 4),
)

# Per-signal fields, each stored field-major (all labels, then all
# transducers, ...), with their widths.
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("phys_min", 8),
    ("phys_max", 8),
    ("dig_min", 8),
    ("dig_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


class EdfError(Exception):
    """Base class for EDF ingestion failures."""


class TruncatedFile(EdfError):
    pass


class MalformedHeader(EdfError):
    pass


class ChannelNotFound(EdfError):
    pass


class AmbiguousChannel(EdfError):
    pass


class InconsistentLengths(EdfError):
    pass


class UnparsableLine(EdfError):
    pass


@dataclass
class SignalHeader:
    label: str
    transducer: str = ""
    physical_dimension: str = "uV"
    phys_min: float = -250.0
    phys_max: float = 250.0
    dig_min: int = -32768
    dig_max: int = 32767
    prefiltering: str = ""
    samples_per_record: int = 128

    def validate(self) -> None:
        if self.dig_min >= self.dig_max:
            raise MalformedHeader(f"dig_min >= dig_max for signal {self.label!r}")
        if self.phys_min == self.phys_max:
            raise MalformedHeader(f"phys_min == phys_max for signal {self.label!r}")
        if self.samples_per_record < 1:
            raise MalformedHeader(f"samples_per_record < 1 for signal {self.label!r}")


@dataclass
class EdfHeader:
    version: str = "0"
    patient_id: str = ""
    recording_id: str = ""
    start_datetime: dt.datetime = dt.datetime(2024, 1, 1, 0, 0, 0)
    n_records: int = 0
    record_duration_s: float = 1.0
    signals: list[SignalHeader] = field(default_factory=list)

    @property
    def n_signals(self) -> int:
        return len(self.signals)

    @property
    def header_bytes(self) -> int:
        return 256 * (1 + self.n_signals)

    @property
    def record_size_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)

    def validate(self) -> None:
        if self.n_records < 0:
            raise MalformedHeader("n_records negative")
        if self.record_duration_s <= 0:
            raise MalformedHeader("record_duration_s must be positive")
        for s in self.signals:
            s.validate()


@dataclass
class EegRecording:
    samples: np.ndarray  # microvolts
    fs: float
    channel_label: str
    subject_id: str

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.fs


@dataclass(frozen=True)
class ApneaEvent:
    onset_s: float
    duration_s: float
    kind: str

    @property
    def end_s(self) -> float:
        return self.onset_s + self.duration_s


def _ascii(value: str, width: int) -> bytes:
    out = value.encode("ascii")
    if len(out) > width:
        raise MalformedHeader(f"field value {value!r} exceeds {width} chars")
    return out.ljust(width)


def _num_field(raw: bytes, name: str, kind):
    text = raw.decode("ascii", errors="replace").strip()
    try:
        return kind(text)
    except ValueError:
        raise MalformedHeader(f"non-numeric {name} field: {text!r}") from None


def _parse_start(date_raw: bytes, time_raw: bytes) -> dt.datetime:
    try:
        d, m, y = (int(p) for p in date_raw.decode("ascii").strip().split("."))
        hh, mm, ss = (int(p) for p in time_raw.decode("ascii").strip().split("."))
        # EDF clipping convention: two-digit years 85-99 are 1985-1999.
        year = 1900 + y if y >= 85 else 2000 + y
        return dt.datetime(year, m, d, hh, mm, ss)
    except (ValueError, UnicodeDecodeError):
        raise MalformedHeader(
            f"bad start date/time: {date_raw!r} {time_raw!r}"
        ) from None


def parse_edf(data: bytes) -> tuple[EdfHeader, list[np.ndarray]]:
    """Decode EDF bytes into a header and per-signal digital samples.

    Each returned array is the int16 samples of one signal with its data
    records concatenated in order. No calibration is applied here.
    """
    if len(data) < 256:
        raise TruncatedFile(f"file is {len(data)} bytes, below the 256-byte header")
    fixed = {}
    pos = 0
    for name, width in _FIXED_FIELDS:
        fixed[name] = data[pos : pos + width]
        pos += width

    n_signals = _num_field(fixed["n_signals"], "n_signals", int)
    if n_signals < 1:
        raise MalformedHeader(f"n_signals must be >= 1, got {n_signals}")
    header_bytes = _num_field(fixed["header_bytes"], "header_bytes", int)
    if header_bytes != 256 * (1 + n_signals):
        raise MalformedHeader(
            f"header_bytes field is {header_bytes}, expected "
            f"{256 * (1 + n_signals)} for {n_signals} signals"
        )
    if len(data) < header_bytes:
        raise TruncatedFile(
            f"file is {len(data)} bytes, header alone needs {header_bytes}"
        )

    columns: dict[str, list] = {}
    for name, width in _SIGNAL_FIELDS:
        items = []
        for _ in range(n_signals):
            items.append(data[pos : pos + width])
            pos += width
        columns[name] = items

    signals = []
    for i in range(n_signals):
        signals.append(
            SignalHeader(
                label=columns["label"][i].decode("ascii", errors="replace").strip(),
                transducer=columns["transducer"][i].decode("ascii", errors="replace").strip(),
                physical_dimension=columns["physical_dimension"][i]
                .decode("ascii", errors="replace")
                .strip(),
                phys_min=_num_field(columns["phys_min"][i], "phys_min", float),
                phys_max=_num_field(columns["phys_max"][i], "phys_max", float),
                dig_min=_num_field(columns["dig_min"][i], "dig_min", int),
                dig_max=_num_field(columns["dig_max"][i], "dig_max", int),
                prefiltering=columns["prefiltering"][i]
                .decode("ascii", errors="replace")
                .strip(),
                samples_per_record=_num_field(
                    columns["samples_per_record"][i], "samples_per_record", int
                ),
            )
        )

    header = EdfHeader(
        version=fixed["version"].decode("ascii", errors="replace").strip(),
        patient_id=fixed["patient_id"].decode("ascii", errors="replace").strip(),
        recording_id=fixed["recording_id"].decode("ascii", errors="replace").strip(),
        start_datetime=_parse_start(fixed["start_date"], fixed["start_time"]),
        n_records=_num_field(fixed["n_records"], "n_records", int),
        record_duration_s=_num_field(
            fixed["record_duration_s"], "record_duration_s", float
        ),
        signals=signals,
    )

    record_size = header.record_size_bytes
    if header.n_records == -1:
        # Unknown record count: infer from the payload length.
        header.n_records = (len(data) - header_bytes) // record_size
    header.validate()

    expected = header_bytes + header.n_records * record_size
    if len(data) < expected:
        raise TruncatedFile(
            f"file is {len(data)} bytes, need {expected} for "
            f"{header.n_records} records of {record_size} bytes"
        )

    raw = np.frombuffer(
        data, dtype="<i2", count=header.n_records * record_size // 2, offset=header_bytes
    )
    per_record = [s.samples_per_record for s in header.signals]
    offsets = np.cumsum([0] + per_record)
    stride = offsets[-1]
    out = []
    for i in range(n_signals):
        block = raw.reshape(header.n_records, stride)[:, offsets[i] : offsets[i + 1]]
        out.append(np.ascontiguousarray(block).reshape(-1))
    return header, out


def write_edf(header: EdfHeader, signals: list[np.ndarray]) -> bytes:
    """Serialize a header and per-signal digital samples to EDF bytes."""
    header.validate()
    if len(signals) != header.n_signals:
        raise InconsistentLengths(
            f"{len(signals)} signal arrays for {header.n_signals} header entries"
        )
    for sig_header, sig in zip(header.signals, signals):
        want = header.n_records * sig_header.samples_per_record
        if len(sig) != want:
            raise InconsistentLengths(
                f"signal {sig_header.label!r} has {len(sig)} samples, "
                f"expected {want}"
            )

    start = header.start_datetime
    if not 1985 <= start.year <= 2084:
        raise MalformedHeader("EDF start year must be in 1985..2084")

    buf = io.BytesIO()
    buf.write(_ascii(header.version, 8))
    buf.write(_ascii(header.patient_id, 80))
    buf.write(_ascii(header.recording_id, 80))
    buf.write(_ascii(start.strftime("%d.%m.%y"), 8))
    buf.write(_ascii(start.strftime("%H.%M.%S"), 8))
    buf.write(_ascii(str(header.header_bytes), 8))
    buf.write(_ascii("", 44))
    buf.write(_ascii(str(header.n_records), 8))
    buf.write(_ascii(_format_number(header.record_duration_s, 8), 8))
    buf.write(_ascii(str(header.n_signals), 4))

    def column(getter, width):
        for s in header.signals:
            buf.write(_ascii(getter(s), width))

    column(lambda s: s.label, 16)
    column(lambda s: s.transducer, 80)
    column(lambda s: s.physical_dimension, 8)
    column(lambda s: _format_number(s.phys_min, 8), 8)
    column(lambda s: _format_number(s.phys_max, 8), 8)
    column(lambda s: str(s.dig_min), 8)
    column(lambda s: str(s.dig_max), 8)
    column(lambda s: s.prefiltering, 80)
    column(lambda s: str(s.samples_per_record), 8)
    column(lambda s: "", 32)

    per_record = [s.samples_per_record for s in header.signals]
    arrays = [np.asarray(s, dtype="<i2") for s in signals]
    for rec in range(header.n_records):
        for i, n in enumerate(per_record):
            buf.write(arrays[i][rec * n : (rec + 1) * n].tobytes())
    return buf.getvalue()


def _format_number(x: float, width: int) -> str:
    """Shortest ASCII form of x that still parses back to the same value."""
    if float(x) == int(x):
        text = str(int(x))
    else:
        text = repr(float(x))
    if len(text) > width:
        text = f"{x:.{width - 6}g}"
        if float(text) != float(x):
            raise MalformedHeader(f"value {x!r} does not fit in {width} chars")
    return text


def digital_to_physical(d, cal: SignalHeader):
    """Affine EDF calibration: digital counts to physical units."""
    scale = (cal.phys_max - cal.phys_min) / (cal.dig_max - cal.dig_min)
    return cal.phys_min + (np.asarray(d, dtype=np.float64) - cal.dig_min) * scale


def extract_channel(
    header: EdfHeader,
    signals: list[np.ndarray],
    label: str,
    subject_id: str | None = None,
) -> EegRecording:
    """Pull one channel out as a calibrated recording.

    The label must match exactly one signal after whitespace trimming.
    Sampling rate comes from samples_per_record / record_duration_s.
    """
    want = label.strip()
    matches = [i for i, s in enumerate(header.signals) if s.label.strip() == want]
    if not matches:
        available = [s.label for s in header.signals]
        raise ChannelNotFound(f"no channel {label!r}; available: {available}")
    if len(matches) > 1:
        raise AmbiguousChannel(f"label {label!r} matches {len(matches)} signals")
    idx = matches[0]
    sig_header = header.signals[idx]
    if subject_id is None:
        subject_id = header.patient_id.split()[0] if header.patient_id.split() else "unknown"
    return EegRecording(
        samples=digital_to_physical(signals[idx], sig_header),
        fs=sig_header.samples_per_record / header.record_duration_s,
        channel_label=sig_header.label,
        subject_id=subject_id,
    )


def parse_events(
    text: str,
    start_datetime: dt.datetime | None = None,
    strict: bool = False,
) -> tuple[list[ApneaEvent], int]:
    """Parse respiratory-event annotations.

    Two line layouts are accepted and may be mixed:
      * CSV: ``onset_s,duration_s,kind`` (header line optional)
      * clock time: ``HH:MM:SS <kind> <duration_s>``, resolved against
        ``start_datetime`` (wrapping past midnight)

    Lines with unknown kinds or that fail to parse are skipped and
    counted unless ``strict`` is set, in which case they raise
    UnparsableLine. Returns (events sorted by onset, skipped count).
    """
    events: list[ApneaEvent] = []
    skipped = 0

    def reject(line: str, why: str):
        nonlocal skipped
        if strict:
            raise UnparsableLine(f"{why}: {line!r}")
        skipped += 1
        log.warning("skipping annotation line (%s): %r", why, line)

    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parsed = _parse_csv_line(line) or _parse_clock_line(line, start_datetime)
        if parsed is None:
            if _looks_like_header(line):
                continue
            reject(line, "unrecognized layout")
            continue
        onset, duration, kind = parsed
        if kind not in EVENT_KINDS:
            reject(line, f"unknown kind {kind!r}")
            continue
        if onset < 0 or duration <= 0:
            reject(line, "bad onset/duration")
            continue
        events.append(ApneaEvent(onset, duration, kind))

    events.sort(key=lambda e: (e.onset_s, e.duration_s, e.kind))
    return events, skipped


def _looks_like_header(line: str) -> bool:
    first = line.split(",")[0].strip().lower()
    return first in ("onset", "onset_s", "time")


def _parse_csv_line(line: str):
    row = next(csv.reader([line]))
    if len(row) != 3:
        return None
    try:
        return float(row[0]), float(row[1]), row[2].strip().upper()
    except ValueError:
        return None


def _parse_clock_line(line: str, start: dt.datetime | None):
    parts = line.split()
    if len(parts) != 3 or start is None:
        return None
    try:
        hh, mm, ss = (int(p) for p in parts[0].split(":"))
        duration = float(parts[2])
    except ValueError:
        return None
    if not (0 <= hh < 24 and 0 <= mm < 60 and 0 <= ss < 60):
        return None
    clock = hh * 3600 + mm * 60 + ss
    ref = start.hour * 3600 + start.minute * 60 + start.second
    onset = (clock - ref) % 86400
    return float(onset), duration, parts[1].strip().upper()


def events_to_csv(events: list[ApneaEvent]) -> str:
    """Canonical CSV layout for re-serialization."""
    lines = ["onset_s,duration_s,kind"]
    for e in events:
        lines.append(f"{_format_number(e.onset_s, 24)},{_format_number(e.duration_s, 24)},{e.kind}")
    return "\n".join(lines) + "\n"
