import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apnea_eeg import edf

from conftest import make_header, make_signals


class TestParseWriteRoundTrip:
    def test_single_signal_round_trip(self, rng):
        header = make_header(n_records=3)
        signals = make_signals(header, rng)
        parsed_header, parsed_signals = edf.parse_edf(edf.write_edf(header, signals))
        assert parsed_header == header
        np.testing.assert_array_equal(parsed_signals[0], signals[0])

    def test_two_signal_round_trip(self, rng):
        header = make_header(
            n_records=2,
            signals=[
                edf.SignalHeader(label="C3-A2", samples_per_record=128),
                edf.SignalHeader(label="C4-A1", samples_per_record=64,
                                 phys_min=-100.0, phys_max=100.0),
            ],
        )
        signals = make_signals(header, rng)
        parsed_header, parsed_signals = edf.parse_edf(edf.write_edf(header, signals))
        assert parsed_header == header
        for got, want in zip(parsed_signals, signals):
            np.testing.assert_array_equal(got, want)

    @settings(max_examples=25, deadline=None)
    @given(st.data())
    def test_round_trip_property(self, data):
        n_records = data.draw(st.integers(0, 4))
        n_signals = data.draw(st.integers(1, 3))
        signals_headers = [
            edf.SignalHeader(
                label=f"SIG{i}",
                samples_per_record=data.draw(st.integers(1, 16)),
                phys_min=float(data.draw(st.integers(-1000, -1))),
                phys_max=float(data.draw(st.integers(1, 1000))),
            )
            for i in range(n_signals)
        ]
        header = make_header(n_records=n_records, signals=signals_headers)
        seed = data.draw(st.integers(0, 2**31))
        signals = make_signals(header, np.random.default_rng(seed))
        parsed_header, parsed_signals = edf.parse_edf(edf.write_edf(header, signals))
        assert parsed_header == header
        for got, want in zip(parsed_signals, signals):
            np.testing.assert_array_equal(got, want)

    def test_minimal_file_size(self):
        header = make_header(n_records=1)
        data = edf.write_edf(header, make_signals(header, np.random.default_rng(0)))
        assert len(data) == 512 + 2 * 128  # 256*(1+1) header + int16 samples

    def test_zero_records(self):
        header = make_header(n_records=0)
        data = edf.write_edf(header, [np.zeros(0, dtype=np.int16)])
        parsed_header, parsed_signals = edf.parse_edf(data)
        assert parsed_header.n_records == 0
        assert len(parsed_signals[0]) == 0

    def test_inconsistent_lengths(self):
        header = make_header(n_records=2)
        with pytest.raises(edf.InconsistentLengths):
            edf.write_edf(header, [np.zeros(5, dtype=np.int16)])


class TestParseErrors:
    def test_too_short_for_header(self):
        with pytest.raises(edf.TruncatedFile):
            edf.parse_edf(b"\x00" * 100)

    def test_header_bytes_field_must_match_signal_count(self, rng):
        header = make_header(
            n_records=1,
            signals=[
                edf.SignalHeader(label="A", samples_per_record=4),
                edf.SignalHeader(label="B", samples_per_record=4),
            ],
        )
        data = bytearray(edf.write_edf(header, make_signals(header, rng)))
        assert data[184:192].strip() == b"768"  # 256*(1+2), accepted
        edf.parse_edf(bytes(data))
        data[184:192] = b"512".ljust(8)
        with pytest.raises(edf.MalformedHeader):
            edf.parse_edf(bytes(data))

    def test_truncated_data_records(self, rng):
        header = make_header(n_records=2)
        data = edf.write_edf(header, make_signals(header, rng))
        with pytest.raises(edf.TruncatedFile):
            edf.parse_edf(data[:-10])

    def test_non_numeric_field_reports_name(self, rng):
        header = make_header(n_records=1)
        data = bytearray(edf.write_edf(header, make_signals(header, rng)))
        data[236:244] = b"oops".ljust(8)  # n_records field
        with pytest.raises(edf.MalformedHeader, match="n_records"):
            edf.parse_edf(bytes(data))


class TestCalibration:
    CAL = edf.SignalHeader(label="X", phys_min=-1000.0, phys_max=1000.0,
                           dig_min=-32768, dig_max=32767)

    def test_endpoints(self):
        assert edf.digital_to_physical(self.CAL.dig_min, self.CAL) == self.CAL.phys_min
        assert edf.digital_to_physical(self.CAL.dig_max, self.CAL) == self.CAL.phys_max

    def test_zero_count_value(self):
        # phys_min + (0 - dig_min) * (phys_max - phys_min) / (dig_max - dig_min)
        expected = -1000.0 + 32768 * 2000.0 / 65535.0
        got = edf.digital_to_physical(0, self.CAL)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.01526, abs=1e-5)

    @given(st.integers(-32768, 32767))
    def test_affine_midpoint(self, d):
        # affine map: midpoint of digital range maps to midpoint of physical range
        lo = edf.digital_to_physical(d, self.CAL)
        hi = edf.digital_to_physical(self.CAL.dig_max + self.CAL.dig_min - d, self.CAL)
        assert (lo + hi) / 2 == pytest.approx(
            (self.CAL.phys_min + self.CAL.phys_max) / 2, abs=1e-9
        )


class TestExtractChannel:
    def _two_channel(self, rng):
        header = make_header(
            n_records=2,
            signals=[
                edf.SignalHeader(label="C3-A2", samples_per_record=128),
                edf.SignalHeader(label="C4-A1", samples_per_record=128),
            ],
        )
        return header, make_signals(header, rng)

    def test_extracts_requested_channel_only(self, rng):
        header, signals = self._two_channel(rng)
        rec = edf.extract_channel(header, signals, "C3-A2")
        assert rec.channel_label == "C3-A2"
        assert rec.subject_id == "subj01"
        expected = edf.digital_to_physical(signals[0], header.signals[0])
        np.testing.assert_allclose(rec.samples, expected)

    def test_sampling_rate_from_record_geometry(self, rng):
        header, signals = self._two_channel(rng)
        rec = edf.extract_channel(header, signals, "C3-A2")
        assert rec.fs == 128.0  # samples_per_record=128 over 1 s records
        assert rec.duration_s == pytest.approx(2.0)

    def test_unknown_channel_lists_available(self, rng):
        header, signals = self._two_channel(rng)
        with pytest.raises(edf.ChannelNotFound, match="C4-A1"):
            edf.extract_channel(header, signals, "XYZ")

    def test_ambiguous_channel(self, rng):
        header = make_header(
            n_records=1,
            signals=[
                edf.SignalHeader(label="C3-A2", samples_per_record=4),
                edf.SignalHeader(label=" C3-A2 ", samples_per_record=4),
            ],
        )
        with pytest.raises(edf.AmbiguousChannel):
            edf.extract_channel(header, make_signals(header, np.random.default_rng(0)), "C3-A2")


class TestParseEvents:
    def test_csv_line(self):
        events, skipped = edf.parse_events("30.0,15.0,APNEA-O\n")
        assert skipped == 0
        assert events == [edf.ApneaEvent(30.0, 15.0, "APNEA-O")]

    def test_empty_file(self):
        events, skipped = edf.parse_events("")
        assert events == [] and skipped == 0

    def test_sorted_by_onset(self):
        text = "100,10,HYP-O\n30,15,APNEA-O\n60,20,APNEA-C\n"
        events, _ = edf.parse_events(text)
        assert [e.onset_s for e in events] == sorted(e.onset_s for e in events)
        assert [e.kind for e in events] == ["APNEA-O", "APNEA-C", "HYP-O"]

    def test_header_line_ignored(self):
        events, skipped = edf.parse_events("onset_s,duration_s,kind\n5,12,HYP-C\n")
        assert len(events) == 1 and skipped == 0

    def test_unknown_kind_lenient_vs_strict(self):
        text = "5,12,APNEA-O\n9,3,SNORE\n"
        events, skipped = edf.parse_events(text)
        assert len(events) == 1 and skipped == 1
        with pytest.raises(edf.UnparsableLine):
            edf.parse_events(text, strict=True)

    def test_clock_time_layout(self):
        start = dt.datetime(2024, 1, 1, 23, 0, 0)
        events, skipped = edf.parse_events(
            "23:10:00 APNEA-O 20\n00:05:30 HYP-M 15\n", start_datetime=start
        )
        assert skipped == 0
        assert events[0] == edf.ApneaEvent(600.0, 20.0, "APNEA-O")
        # 00:05:30 is past midnight: 1 h 5 min 30 s after the 23:00 start
        assert events[1] == edf.ApneaEvent(3930.0, 15.0, "HYP-M")

    def test_reserialization_idempotent(self):
        text = "100,10,HYP-O\n30,15,APNEA-O\njunk line here\n"
        events, _ = edf.parse_events(text)
        again, skipped = edf.parse_events(edf.events_to_csv(events))
        assert skipped == 0
        assert again == events
