import numpy as np
import pytest

from spadcal.errors import ParameterError
from spadcal.streams import (
    MAGIC,
    PS_PER_S,
    TimestampStream,
    make_strictly_increasing,
    read_binary,
    read_csv,
    to_ps,
    write_binary,
    write_csv,
)


def test_stream_validation():
    TimestampStream(np.array([0, 10, 20], dtype=np.int64), 100)
    with pytest.raises(ParameterError):
        TimestampStream(np.array([10, 10], dtype=np.int64), 100)
    with pytest.raises(ParameterError):
        TimestampStream(np.array([10, 5], dtype=np.int64), 100)
    with pytest.raises(ParameterError):
        TimestampStream(np.array([10, 200], dtype=np.int64), 100)
    with pytest.raises(ParameterError):
        TimestampStream(np.array([], dtype=np.int64), 0)


def test_unit_conversions():
    assert to_ps(1.0) == PS_PER_S
    s = TimestampStream(np.array([500_000], dtype=np.int64), PS_PER_S)
    assert s.times_s[0] == 5e-7
    assert s.duration_s == 1.0
    assert s.rate_cps == 1.0


def test_from_seconds_roundtrip():
    s = TimestampStream.from_seconds([1e-6, 2e-6, 3.0000004e-6], 1e-3, "x")
    assert list(s.times_ps) == [1_000_000, 2_000_000, 3_000_000]
    assert s.origin == "x"


def test_make_strictly_increasing_bumps_ties():
    t = make_strictly_increasing(np.array([5, 5, 5, 1, 6], dtype=np.int64), 100)
    assert list(t) == [1, 5, 6, 7, 8]
    # events pushed past the duration are dropped
    t = make_strictly_increasing(np.array([99, 100, 100], dtype=np.int64), 100)
    assert list(t) == [99, 100]


def test_binary_roundtrip(tmp_path):
    s = TimestampStream(np.array([0, 7, 123456789], dtype=np.int64), 2 * PS_PER_S, "src")
    path = tmp_path / "s.bin"
    write_binary(s, path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    back = read_binary(path, duration_s=2.0, origin="src")
    assert np.array_equal(back.times_ps, s.times_ps)
    assert back.duration_ps == s.duration_ps
    # duration can be inferred from the last event
    back2 = read_binary(path)
    assert back2.duration_ps == 123456789


def test_binary_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 8)
    with pytest.raises(ParameterError):
        read_binary(path)


def test_csv_roundtrip_tenth_ns(tmp_path):
    # CSV is one-decimal-ns: times on the 100 ps grid survive exactly
    s = TimestampStream(np.array([100, 2500, 999_900], dtype=np.int64), PS_PER_S)
    path = tmp_path / "s.csv"
    write_csv(s, path)
    assert path.read_text().splitlines()[0] == "t_ns"
    back = read_csv(path, duration_s=1.0)
    assert np.array_equal(back.times_ps, s.times_ps)
