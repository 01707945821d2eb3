"""Timestamp streams: the event-time currency between sources, detectors and
analyzers.

Times are kept as int64 picoseconds so dead-time comparisons are exact and
platform independent. Streams are immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

PS_PER_S = 1_000_000_000_000
MAGIC = b"PHTSTRM1"


def to_ps(seconds: float) -> int:
    """Round a time in seconds onto the integer-picosecond grid."""
    return int(round(seconds * PS_PER_S))


def make_strictly_increasing(times_ps: np.ndarray, duration_ps: int) -> np.ndarray:
    """Sort event times and resolve picosecond collisions.

    Coincident events (possible when independent draws round to the same
    picosecond) are bumped forward by 1 ps each so no event is dropped; an
    event pushed past the duration (vanishingly rare) is discarded.
    """
    t = np.sort(np.asarray(times_ps, dtype=np.int64), kind="stable")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        # t'[i] = max(t[i], t'[i-1] + 1) as a vectorized scan
        idx = np.arange(t.size, dtype=np.int64)
        t = np.maximum.accumulate(t - idx) + idx
    if t.size and t[-1] > duration_ps:
        t = t[t <= duration_ps]
    return t


@dataclass(frozen=True)
class TimestampStream:
    """Strictly increasing event times (int64 ps) on [0, duration]."""

    times_ps: np.ndarray
    duration_ps: int
    origin: str = ""

    def __post_init__(self):
        t = np.ascontiguousarray(self.times_ps, dtype=np.int64)
        object.__setattr__(self, "times_ps", t)
        object.__setattr__(self, "duration_ps", int(self.duration_ps))
        if self.duration_ps <= 0:
            raise ParameterError("duration: must be positive")
        if t.size:
            if t[0] < 0 or t[-1] > self.duration_ps:
                raise ParameterError("times: must lie within [0, duration]")
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise ParameterError("times: must be strictly increasing")

    def __len__(self) -> int:
        return int(self.times_ps.size)

    @property
    def duration_s(self) -> float:
        return self.duration_ps / PS_PER_S

    @property
    def times_s(self) -> np.ndarray:
        return self.times_ps / PS_PER_S

    @property
    def rate_cps(self) -> float:
        return len(self) / self.duration_s

    @classmethod
    def from_seconds(cls, times_s, duration_s: float, origin: str = "") -> "TimestampStream":
        t = np.round(np.asarray(times_s, dtype=np.float64) * PS_PER_S).astype(np.int64)
        return cls(t, to_ps(duration_s), origin)


def write_binary(stream: TimestampStream, path) -> None:
    """Write the stream as magic header + little-endian u64 picosecond times."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(stream.times_ps.astype("<u8").tobytes())


def read_binary(path, duration_s: float | None = None, origin: str = "") -> TimestampStream:
    """Read a PHTSTRM1 file; without an explicit duration the last event time
    is used."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ParameterError(f"file {path}: missing PHTSTRM1 magic header")
    times = np.frombuffer(raw[len(MAGIC):], dtype="<u8").astype(np.int64)
    if duration_s is not None:
        duration_ps = to_ps(duration_s)
    else:
        duration_ps = int(times[-1]) if times.size else 1
    return TimestampStream(times, duration_ps, origin)


def write_csv(stream: TimestampStream, path) -> None:
    """Export as one-decimal-nanosecond CSV with header ``t_ns`` (lossy: 0.1 ns)."""
    with open(path, "w") as f:
        f.write("t_ns\n")
        for t in stream.times_ps:
            f.write(f"{t / 1000:.1f}\n")


def read_csv(path, duration_s: float | None = None, origin: str = "") -> TimestampStream:
    with open(path) as f:
        header = f.readline().strip()
        if header != "t_ns":
            raise ParameterError(f"file {path}: expected header 't_ns', got {header!r}")
        times = np.array([round(float(line) * 1000) for line in f if line.strip()], dtype=np.int64)
    duration_ps = to_ps(duration_s) if duration_s is not None else (int(times[-1]) if times.size else 1)
    return TimestampStream(times, duration_ps, origin)
