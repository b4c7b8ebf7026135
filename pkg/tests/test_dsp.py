import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apnea_eeg import dsp
from apnea_eeg.edf import EegRecording

FS = 128.0


def sine(f_hz, duration_s, fs=FS, amplitude=1.0):
    t = np.arange(int(duration_s * fs)) / fs
    return amplitude * np.sin(2 * np.pi * f_hz * t)


def steady_amplitude(y, fs=FS, discard_s=2.0):
    tail = y[int(discard_s * fs):]
    return np.sqrt(2.0) * np.std(tail)


class TestDesign:
    @pytest.mark.parametrize("band", dsp.DEFAULT_BANDS, ids=lambda b: b.name)
    def test_edge_gain_is_minus_3db(self, band):
        cascade = dsp.design_bandpass(band.low_hz, band.high_hz, FS, 4)
        grid = np.linspace(0.01, FS / 2 - 0.01, 6000)
        peak = np.max(np.abs(dsp.frequency_response(cascade, grid)))
        for edge in (band.low_hz, band.high_hz):
            gain = abs(dsp.frequency_response(cascade, edge))
            assert 0.70 * peak <= gain <= 0.72 * peak

    @pytest.mark.parametrize("band", dsp.DEFAULT_BANDS, ids=lambda b: b.name)
    def test_dc_killed(self, band):
        cascade = dsp.design_bandpass(band.low_hz, band.high_hz, FS, 4)
        assert abs(dsp.frequency_response(cascade, 0.0)) < 1e-3

    @pytest.mark.parametrize("band", dsp.DEFAULT_BANDS, ids=lambda b: b.name)
    def test_stable(self, band):
        cascade = dsp.design_bandpass(band.low_hz, band.high_hz, FS, 4)
        for section in cascade.sections:
            assert np.all(np.abs(section.poles()) < 1.0)

    def test_alpha_center_gain(self):
        cascade = dsp.design_bandpass(8.0, 12.0, FS, 4)
        gain_db = 20 * np.log10(abs(dsp.frequency_response(cascade, 9.8)))
        assert abs(gain_db) < 1.0  # 9.8 ~ sqrt(8*12), the passband center

    def test_delta_band_far_stopband(self):
        cascade = dsp.design_bandpass(0.5, 4.0, FS, 4)
        assert abs(dsp.frequency_response(cascade, 50.0)) < 1e-4

    @pytest.mark.parametrize("band", dsp.DEFAULT_BANDS, ids=lambda b: b.name)
    def test_monotone_outside_passband(self, band):
        cascade = dsp.design_bandpass(band.low_hz, band.high_hz, FS, 4)
        below = np.linspace(1e-3, band.low_hz, 300)
        above = np.linspace(band.high_hz, FS / 2 - 1e-6, 300)
        mag_below = np.abs(dsp.frequency_response(cascade, below))
        mag_above = np.abs(dsp.frequency_response(cascade, above))
        assert np.all(np.diff(mag_below) > -1e-12)
        assert np.all(np.diff(mag_above) < 1e-12)

    def test_invalid_bands_rejected(self):
        with pytest.raises(dsp.InvalidBand):
            dsp.design_bandpass(8.0, 4.0, FS, 4)
        with pytest.raises(dsp.InvalidBand):
            dsp.design_bandpass(1.0, 70.0, FS, 4)
        with pytest.raises(dsp.InvalidBand):
            dsp.design_bandpass(1.0, 4.0, FS, 3)

    def test_matches_reference_design(self):
        # independent oracle: scipy's Butterworth designer
        scipy_signal = pytest.importorskip("scipy.signal")
        grid = np.linspace(0.01, 63.9, 3000)
        for band in dsp.DEFAULT_BANDS:
            cascade = dsp.design_bandpass(band.low_hz, band.high_hz, FS, 4)
            mine = np.abs(dsp.frequency_response(cascade, grid))
            sos = scipy_signal.butter(
                4, [band.low_hz, band.high_hz], btype="bandpass", fs=FS, output="sos"
            )
            _, h = scipy_signal.sosfreqz(sos, worN=2 * np.pi * grid / FS)
            np.testing.assert_allclose(mine, np.abs(h), atol=1e-9)


class TestFrequencyResponse:
    def test_identity_section(self):
        cascade = dsp.BiquadCascade(
            sections=(dsp.BiquadSection(1.0, 0.0, 0.0, 0.0, 0.0),),
            band="identity", fs=FS, order=2, low_hz=1.0, high_hz=2.0,
        )
        for f in (0.0, 10.0, 63.0):
            assert dsp.frequency_response(cascade, f) == pytest.approx(1.0)

    def test_cascade_multiplicativity(self):
        section = dsp.BiquadSection(0.3, 0.1, -0.3, -0.5, 0.25)
        one = dsp.BiquadCascade((section,), "x", FS, 2, 1.0, 2.0)
        two = dsp.BiquadCascade((section, section), "xx", FS, 4, 1.0, 2.0)
        for f in (0.5, 5.0, 20.0, 60.0):
            assert dsp.frequency_response(two, f) == pytest.approx(
                dsp.frequency_response(one, f) ** 2
            )


class TestApplyCascade:
    CASCADE = dsp.design_bandpass(8.0, 12.0, FS, 4)

    def test_zero_in_zero_out(self):
        out = dsp.apply_cascade(self.CASCADE, np.zeros(256))
        np.testing.assert_array_equal(out, np.zeros(256))

    def test_sine_steady_state_matches_response(self):
        y = dsp.apply_cascade(self.CASCADE, sine(10.0, 10.0))
        expected = abs(dsp.frequency_response(self.CASCADE, 10.0))
        assert steady_amplitude(y) == pytest.approx(expected, rel=0.02)

    def test_linearity(self, rng):
        x = rng.standard_normal(512)
        y = rng.standard_normal(512)
        lhs = dsp.apply_cascade(self.CASCADE, 2.5 * x - 1.5 * y)
        rhs = 2.5 * dsp.apply_cascade(self.CASCADE, x) - 1.5 * dsp.apply_cascade(self.CASCADE, y)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_scaling(self, rng):
        x = rng.standard_normal(256)
        np.testing.assert_allclose(
            dsp.apply_cascade(self.CASCADE, 3.0 * x),
            3.0 * dsp.apply_cascade(self.CASCADE, x),
            rtol=1e-12,
        )

    def test_output_length_preserved(self, rng):
        x = rng.standard_normal(333)
        assert len(dsp.apply_cascade(self.CASCADE, x)) == 333


class TestBands:
    CONFIG = dsp.PreprocessConfig()

    def band_energies(self, x):
        bands = dsp.decompose_bands(x, self.CONFIG)
        return {name: float(np.sum(y**2)) for name, y in bands.items()}

    def test_10hz_goes_to_alpha(self):
        energies = self.band_energies(sine(10.0, 8.0))
        assert energies["alpha"] / sum(energies.values()) >= 0.90

    def test_2hz_goes_to_delta(self):
        energies = self.band_energies(sine(2.0, 8.0))
        assert energies["delta"] / sum(energies.values()) >= 0.90

    def test_zero_signal(self):
        bands = dsp.decompose_bands(np.zeros(512), self.CONFIG)
        assert list(bands) == ["delta", "theta", "alpha", "sigma", "beta"]
        for y in bands.values():
            np.testing.assert_array_equal(y, np.zeros(512))

    def test_recombine_of_decomposed_zero(self):
        out = dsp.recombine_bands(dsp.decompose_bands(np.zeros(64), self.CONFIG))
        np.testing.assert_array_equal(out, np.zeros(64))

    @pytest.mark.parametrize("noise_hz", [50.0, 60.0])
    def test_mains_rejection(self, noise_hz):
        x = sine(noise_hz, 8.0)
        out = dsp.recombine_bands(dsp.decompose_bands(x, self.CONFIG))
        in_rms = np.sqrt(np.mean(x**2))
        out_rms = np.sqrt(np.mean(out[int(2 * FS):] ** 2))
        assert out_rms <= 0.1 * in_rms  # >= 20 dB down

    def test_recombine_length_mismatch(self):
        with pytest.raises(dsp.LengthMismatch):
            dsp.recombine_bands([np.zeros(4), np.zeros(5)])


class TestZscore:
    def test_frozen_small_case(self):
        # mu=2, population sigma=sqrt(2/3)
        z, degenerate = dsp.zscore([1.0, 2.0, 3.0])
        assert not degenerate
        np.testing.assert_allclose(z, [-1.2247448, 0.0, 1.2247448], atol=1e-6)

    def test_constant_signal_flagged(self):
        z, degenerate = dsp.zscore(np.full(100, 3.7))
        assert degenerate
        np.testing.assert_array_equal(z, np.zeros(100))

    def test_idempotent(self, rng):
        x = rng.standard_normal(500) * 12 + 4
        once, _ = dsp.zscore(x)
        twice, _ = dsp.zscore(once)
        np.testing.assert_allclose(twice, once, atol=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 400))
    def test_moments_property(self, seed, n):
        x = np.random.default_rng(seed).standard_normal(n) * 7 + 3
        z, degenerate = dsp.zscore(x)
        if not degenerate:
            assert abs(float(np.mean(z))) < 1e-9
            assert abs(float(np.std(z)) - 1.0) < 1e-9


class TestPreprocessRecording:
    CONFIG = dsp.PreprocessConfig()

    def _recording(self, samples):
        return EegRecording(samples=samples, fs=FS, channel_label="C3-A2", subject_id="s")

    def test_output_moments(self, rng):
        rec = self._recording(rng.standard_normal(int(30 * FS)) * 40)
        out = dsp.preprocess_recording(rec, self.CONFIG)
        assert abs(float(np.mean(out.samples))) < 1e-6
        assert abs(float(np.std(out.samples)) - 1.0) < 1e-6
        assert out.fs == rec.fs
        assert out.channel_label == rec.channel_label
        assert out.subject_id == rec.subject_id

    def test_mains_contamination_suppressed(self):
        clean = sine(10.0, 16.0)
        contaminated = clean + sine(50.0, 16.0)
        out = dsp.preprocess_recording(self._recording(contaminated), self.CONFIG)
        spectrum = np.abs(np.fft.rfft(out.samples[int(2 * FS):]))
        freqs = np.fft.rfftfreq(len(out.samples) - int(2 * FS), d=1 / FS)
        peak_10 = spectrum[np.argmin(np.abs(freqs - 10.0))]
        peak_50 = spectrum[np.argmin(np.abs(freqs - 50.0))]
        assert 20 * np.log10(peak_10 / peak_50) >= 20.0

    def test_deterministic(self, rng):
        samples = rng.standard_normal(int(10 * FS))
        rec = self._recording(samples)
        a = dsp.preprocess_recording(rec, self.CONFIG)
        b = dsp.preprocess_recording(rec, self.CONFIG)
        assert np.array_equal(a.samples, b.samples)
