import datetime as dt

import numpy as np
import pytest

from apnea_eeg import edf, nn


def make_header(n_records=2, signals=None, start=dt.datetime(2024, 3, 5, 22, 30, 0)):
    if signals is None:
        signals = [edf.SignalHeader(label="C3-A2", samples_per_record=128)]
    return edf.EdfHeader(
        version="0",
        patient_id="subj01 test",
        recording_id="fixture recording",
        start_datetime=start,
        n_records=n_records,
        record_duration_s=1.0,
        signals=signals,
    )


def make_signals(header, rng):
    return [
        rng.integers(s.dig_min, s.dig_max + 1,
                     size=header.n_records * s.samples_per_record).astype(np.int16)
        for s in header.signals
    ]


TINY_MODEL = nn.ModelConfig(
    conv_blocks=((3, 5), (4, 5), (4, 3), (5, 3)),
    pool_sizes=(2, 2, 2, 2),
    conv_dropout=0.1,
    dense_units=8,
    dense_dropout=0.0,
    learning_rate=0.0015,
)
TINY_LENGTH = 56


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
