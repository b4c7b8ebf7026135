"""Five-band Butterworth filter bank and z-score normalization.

Filters are designed from the analog Butterworth prototype: band
transformation, bilinear discretization with edge prewarping, then
factorization into second-order sections. Application is causal
single-pass Direct Form II transposed with zero initial state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .edf import EegRecording

log = logging.getLogger(__name__)


class DspError(Exception):
    pass


class InvalidBand(DspError):
    pass


class UnstableDesign(DspError):
    pass


class NonFiniteOutput(DspError):
    pass


class LengthMismatch(DspError):
    pass


@dataclass(frozen=True)
class BandDefinition:
    name: str
    low_hz: float
    high_hz: float


DEFAULT_BANDS = (
    BandDefinition("delta", 0.5, 4.0),
    BandDefinition("theta", 4.0, 8.0),
    BandDefinition("alpha", 8.0, 12.0),
    BandDefinition("sigma", 12.0, 16.0),
    BandDefinition("beta", 16.0, 40.0),
)


@dataclass(frozen=True)
class PreprocessConfig:
    bands: tuple[BandDefinition, ...] = DEFAULT_BANDS
    fs: float = 128.0
    order: int = 4

    @property
    def nyquist_hz(self) -> float:
        return self.fs / 2.0

    def validate(self) -> None:
        if self.fs <= 0:
            raise InvalidBand("sampling rate must be positive")
        for band in self.bands:
            if not 0 < band.low_hz < band.high_hz < self.nyquist_hz:
                raise InvalidBand(
                    f"band {band.name}: need 0 < {band.low_hz} < "
                    f"{band.high_hz} < nyquist {self.nyquist_hz}"
                )


@dataclass(frozen=True)
class BiquadSection:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))


@dataclass(frozen=True)
class BiquadCascade:
    sections: tuple[BiquadSection, ...]
    band: str
    fs: float
    order: int
    low_hz: float
    high_hz: float


def _butterworth_prototype(order: int) -> np.ndarray:
    """Poles of the unit-cutoff analog Butterworth lowpass."""
    m = np.arange(-order + 1, order, 2)
    return -np.exp(1j * np.pi * m / (2 * order))


def design_bandpass(low_hz: float, high_hz: float, fs: float, order: int = 4) -> BiquadCascade:
    """Design an order-``order`` Butterworth bandpass as a biquad cascade.

    Gain at both edges is exactly 1/sqrt(2) of the unit passband peak
    because the bilinear transform is prewarped at the band edges.
    """
    if not 0 < low_hz < high_hz < fs / 2:
        raise InvalidBand(f"need 0 < {low_hz} < {high_hz} < {fs / 2}")
    if order < 2 or order % 2:
        raise InvalidBand(f"order must be even and >= 2, got {order}")

    poles_lp = _butterworth_prototype(order)

    # Prewarp the edges so the -3 dB points land exactly on low_hz/high_hz
    # after discretization.
    w1 = 2 * fs * math.tan(math.pi * low_hz / fs)
    w2 = 2 * fs * math.tan(math.pi * high_hz / fs)
    bw = w2 - w1
    wo2 = w1 * w2

    # Lowpass-to-bandpass: each prototype pole splits in two; the N
    # prototype zeros at infinity become N zeros at s=0.
    shifted = poles_lp * (bw / 2.0)
    radical = np.sqrt(shifted**2 - wo2 + 0j)
    poles_bp = np.concatenate([shifted + radical, shifted - radical])
    gain_bp = bw**order

    # Bilinear transform s -> 2fs (z-1)/(z+1). Zeros at s=0 map to z=+1;
    # the N zeros at infinity map to z=-1.
    c = 2.0 * fs
    poles_z = (c + poles_bp) / (c - poles_bp)
    zeros_at_origin = np.zeros(order)
    gain_z = gain_bp * np.real(
        np.prod(c - zeros_at_origin) / np.prod(c - poles_bp)
    )

    sections = _to_sections(poles_z, gain_z)
    cascade = BiquadCascade(
        sections=tuple(sections),
        band=f"{low_hz}-{high_hz}Hz",
        fs=fs,
        order=order,
        low_hz=low_hz,
        high_hz=high_hz,
    )
    for i, sec in enumerate(cascade.sections):
        if not sec.is_stable():
            raise UnstableDesign(
                f"section {i} of {cascade.band} has a pole on or outside the unit circle"
            )
    return cascade


def _to_sections(poles: np.ndarray, gain: float) -> list[BiquadSection]:
    """Factor a conjugate-closed pole set plus (z-1)(z+1) zero pairs into biquads.

    Every section receives one zero at +1 and one at -1 (numerator
    1 - z^-2), so pole/zero pairing by proximity is trivial; poles are
    grouped with their conjugates and ordered with the highest-Q pair last.
    """
    pairs = _pole_pairs(poles)
    pairs.sort(key=lambda p: p[2])  # poles nearest the unit circle last
    n = len(pairs)
    g = abs(gain) ** (1.0 / n)
    gains = [g] * n
    if gain < 0:
        gains[0] = -gains[0]
    return [
        BiquadSection(b0=g, b1=0.0, b2=-g, a1=a1, a2=a2)
        for (a1, a2, _), g in zip(pairs, gains)
    ]


def _pole_pairs(poles: np.ndarray) -> list[tuple[float, float, float]]:
    """Group poles into second-order denominators (a1, a2, max radius)."""
    tol = 1e-9 * max(1.0, float(np.max(np.abs(poles))))
    real = sorted(p.real for p in poles if abs(p.imag) <= tol)
    upper = sorted((p for p in poles if p.imag > tol), key=lambda p: (p.real, p.imag))
    lower = [p for p in poles if p.imag < -tol]
    pairs: list[tuple[float, float, float]] = []
    for p in upper:
        match = min(range(len(lower)), key=lambda i: abs(lower[i] - p.conjugate()))
        if abs(lower[match] - p.conjugate()) > 1e-6 * max(1.0, abs(p)):
            raise UnstableDesign(f"pole {p} lacks a conjugate partner")
        lower.pop(match)
        pairs.append((-2.0 * p.real, abs(p) ** 2, abs(p)))
    if lower:
        raise UnstableDesign("unpaired complex poles after conjugate matching")
    if len(real) % 2:
        raise UnstableDesign("odd real pole count cannot form second-order sections")
    # Leftover real poles pair among themselves: (z-r1)(z-r2).
    for r1, r2 in zip(real[0::2], real[1::2]):
        pairs.append((-(r1 + r2), r1 * r2, max(abs(r1), abs(r2))))
    return pairs


def frequency_response(cascade: BiquadCascade, f_hz) -> np.ndarray | complex:
    """Complex gain of the cascade at frequency f_hz (scalar or array)."""
    f = np.asarray(f_hz, dtype=np.float64)
    z1 = np.exp(-2j * np.pi * f / cascade.fs)
    z2 = z1 * z1
    h = np.ones_like(z1, dtype=np.complex128)
    for s in cascade.sections:
        h = h * (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2)
    return complex(h) if f.ndim == 0 else h


def apply_cascade(cascade: BiquadCascade, signal) -> np.ndarray:
    """Filter causally through each section (DF2T, zero initial state)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise LengthMismatch("signal is empty")
    data = x.tolist()
    for sec in cascade.sections:
        data = _run_biquad(sec, data)
    out = np.asarray(data)
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput(f"non-finite output from cascade {cascade.band}")
    return out


def _run_biquad(sec: BiquadSection, x: list[float]) -> list[float]:
    b0, b1, b2, a1, a2 = sec.b0, sec.b1, sec.b2, sec.a1, sec.a2
    s1 = 0.0
    s2 = 0.0
    out = [0.0] * len(x)
    for i, xi in enumerate(x):
        y = b0 * xi + s1
        s1 = b1 * xi - a1 * y + s2
        s2 = b2 * xi - a2 * y
        out[i] = y
    return out


def band_cascades(config: PreprocessConfig) -> dict[str, BiquadCascade]:
    config.validate()
    return {
        band.name: design_bandpass(band.low_hz, band.high_hz, config.fs, config.order)
        for band in config.bands
    }


def decompose_bands(signal, config: PreprocessConfig) -> dict[str, np.ndarray]:
    """Filter the signal through each band; keys follow the config band order."""
    cascades = band_cascades(config)
    return {name: apply_cascade(c, signal) for name, c in cascades.items()}


def recombine_bands(band_signals) -> np.ndarray:
    """Samplewise sum of the band signals (dict or sequence)."""
    arrays = list(band_signals.values()) if isinstance(band_signals, dict) else list(band_signals)
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise LengthMismatch(f"band lengths differ: {sorted(lengths)}")
    out = np.zeros(lengths.pop(), dtype=np.float64)
    for a in arrays:
        out += np.asarray(a, dtype=np.float64)
    return out


def zscore(signal) -> tuple[np.ndarray, bool]:
    """Center and scale to unit population standard deviation.

    Returns (normalized, degenerate). A near-constant input yields all
    zeros with degenerate=True instead of dividing by ~0.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 2:
        raise LengthMismatch("zscore needs at least 2 samples")
    mu = float(np.mean(x))
    sigma = float(np.std(x))
    if sigma < 1e-12:
        return np.zeros_like(x), True
    return (x - mu) / sigma, False


def preprocess_recording(recording: EegRecording, config: PreprocessConfig) -> EegRecording:
    """Full chain: band decomposition, recombination, z-normalization."""
    bands = decompose_bands(recording.samples, config)
    combined = recombine_bands(bands)
    normalized, degenerate = zscore(combined)
    if degenerate:
        log.warning(
            "recording %s/%s is near-constant; normalized output is all zeros",
            recording.subject_id,
            recording.channel_label,
        )
    return EegRecording(
        samples=normalized,
        fs=recording.fs,
        channel_label=recording.channel_label,
        subject_id=recording.subject_id,
    )
