"""Seeded synthetic EEG corpus with injected apnea band-power signatures.

Generates band-limited colored noise shaped like sleep EEG, then
multiplies the delta component up and the beta component down inside
each injected event interval. Ground truth is exact by construction, so
the labeling pipeline can be verified against the injected intervals.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from . import dsp
from .edf import ApneaEvent, EdfHeader, EVENT_KINDS, SignalHeader, events_to_csv, write_edf

# Rough sleep-EEG band weighting for the baseline noise floor.
_BAND_WEIGHTS = {"delta": 1.0, "theta": 0.65, "alpha": 0.5, "sigma": 0.4, "beta": 0.45}

_START = dt.datetime(2024, 1, 1, 23, 0, 0)


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 3600.0
    fs: float = 128.0
    n_events: int = 40
    event_duration_s: float = 30.0
    min_gap_s: float = 45.0
    edge_margin_s: float = 120.0
    delta_boost: float = 2.5
    beta_suppression: float = 0.15
    rms_uv: float = 15.0
    seed: int = 0
    subject_id: str = "synthetic"

    def validate(self) -> None:
        if self.duration_s <= 0 or self.fs <= 0:
            raise SynthError("duration and fs must be positive")
        if abs(self.fs - round(self.fs)) > 1e-9:
            raise SynthError("fs must be an integer for 1 s data records")
        if self.n_events < 0 or self.event_duration_s <= 0:
            raise SynthError("bad event parameters")
        usable = self.duration_s - 2 * self.edge_margin_s
        if self.n_events and usable / self.n_events < self.event_duration_s + self.min_gap_s:
            raise SynthError(
                f"{self.n_events} events of {self.event_duration_s} s plus "
                f"{self.min_gap_s} s gaps do not fit in {usable} s"
            )


@dataclass
class SynthCorpus:
    edf_bytes: bytes
    events_csv: str
    events: list[ApneaEvent]
    config: SynthConfig


def _place_events(config: SynthConfig, rng: np.random.Generator) -> list[ApneaEvent]:
    """Jittered regular grid; one event per slot keeps gaps guaranteed."""
    if config.n_events == 0:
        return []
    usable = config.duration_s - 2 * config.edge_margin_s
    slot = usable / config.n_events
    slack = slot - config.event_duration_s - config.min_gap_s
    events = []
    for i in range(config.n_events):
        onset = config.edge_margin_s + i * slot + rng.uniform(0.0, max(slack, 0.0))
        events.append(
            ApneaEvent(
                onset_s=round(float(onset), 2),
                duration_s=float(config.event_duration_s),
                kind=EVENT_KINDS[i % len(EVENT_KINDS)],
            )
        )
    return events


def generate_corpus(config: SynthConfig) -> SynthCorpus:
    """Deterministic EDF bytes plus event CSV for the given seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = int(round(config.duration_s * config.fs))
    preprocess = dsp.PreprocessConfig(fs=config.fs)
    events = _place_events(config, rng)

    in_event = np.zeros(n, dtype=np.float64)
    for e in events:
        lo = int(round(e.onset_s * config.fs))
        hi = min(n, int(round(e.end_s * config.fs)))
        in_event[lo:hi] = 1.0

    signal = np.zeros(n, dtype=np.float64)
    for band in preprocess.bands:
        cascade = dsp.design_bandpass(band.low_hz, band.high_hz, config.fs, preprocess.order)
        noise = rng.standard_normal(n)
        shaped = dsp.apply_cascade(cascade, noise)
        rms = np.sqrt(np.mean(shaped**2))
        shaped /= max(rms, 1e-12)
        gain = np.ones(n)
        if band.name == "delta":
            gain += (config.delta_boost - 1.0) * in_event
        elif band.name == "beta":
            gain -= (1.0 - config.beta_suppression) * in_event
        signal += _BAND_WEIGHTS[band.name] * gain * shaped

    signal *= config.rms_uv / max(np.sqrt(np.mean(signal**2)), 1e-12)

    sig_header = SignalHeader(
        label="C3-A2",
        transducer="synthetic",
        physical_dimension="uV",
        phys_min=-250.0,
        phys_max=250.0,
        dig_min=-32768,
        dig_max=32767,
        samples_per_record=int(round(config.fs)),
    )
    scale = (sig_header.dig_max - sig_header.dig_min) / (
        sig_header.phys_max - sig_header.phys_min
    )
    digital = np.clip(
        np.round((signal - sig_header.phys_min) * scale) + sig_header.dig_min,
        sig_header.dig_min,
        sig_header.dig_max,
    ).astype(np.int16)

    n_records = len(digital) // sig_header.samples_per_record
    digital = digital[: n_records * sig_header.samples_per_record]
    header = EdfHeader(
        version="0",
        patient_id=config.subject_id,
        recording_id="synthetic sleep-EEG corpus",
        start_datetime=_START,
        n_records=n_records,
        record_duration_s=1.0,
        signals=[sig_header],
    )
    return SynthCorpus(
        edf_bytes=write_edf(header, [digital]),
        events_csv=events_to_csv(events),
        events=events,
        config=config,
    )
