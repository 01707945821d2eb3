"""Count-trace stability analysis: overlapping Allan deviation of the rate
series, optimal integration time, and linear-drift detection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SignalDomainError


@dataclass(frozen=True)
class CountTrace:
    """Counts per contiguous bin of duration bin_duration_s."""

    bin_duration_s: float
    counts: np.ndarray
    start_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if self.bin_duration_s <= 0:
            raise ParameterError("bin_duration_s: must be > 0")
        if self.counts.size < 2:
            raise ParameterError("counts: trace needs at least 2 bins")
        if np.any(self.counts < 0):
            raise ParameterError("counts: must be non-negative")

    def __len__(self) -> int:
        return int(self.counts.size)

    @property
    def mean_rate_cps(self) -> float:
        return float(self.counts.mean()) / self.bin_duration_s

    @property
    def times_s(self) -> np.ndarray:
        return self.start_s + (np.arange(len(self)) + 0.5) * self.bin_duration_s


def allan_deviation(trace: CountTrace, taus) -> list[tuple[float, float]]:
    """Overlapping Allan deviation of the mean-normalized rate series.

    Each requested tau must be an integer multiple of the trace bin duration;
    a tau needing more than a third of the trace is omitted with a warning.
    Block sums are accumulated in int64, so a noiseless trace returns exactly
    zero.
    """
    n = len(trace)
    total = int(trace.counts.sum())
    if total == 0:
        raise SignalDomainError("trace has zero total counts; relative deviation undefined")
    mean_per_bin = total / n
    cumsum = np.concatenate([[0], np.cumsum(trace.counts)])
    out = []
    for tau in taus:
        m_float = tau / trace.bin_duration_s
        m = int(round(m_float))
        if m < 1 or abs(m_float - m) > 1e-9:
            raise ParameterError(f"tau={tau}: must be an integer multiple of the bin duration")
        if m > n // 3:
            warnings.warn(f"tau={tau}: needs more than a third of the trace; omitted", stacklevel=2)
            continue
        block = cumsum[m:] - cumsum[:-m]  # overlapping m-bin sums
        d = block[m:] - block[:-m]
        avar = float(d.astype(np.float64) @ d.astype(np.float64)) / (2.0 * d.size)
        sigma_rel = np.sqrt(avar) / (m * mean_per_bin)
        out.append((float(tau), float(sigma_rel)))
    return out


def optimal_integration_time(curve) -> float:
    """Tau minimizing sigma_rel; ties break toward the smaller tau."""
    if not curve:
        raise ParameterError("curve: must not be empty")
    ordered = sorted(curve, key=lambda p: p[0])
    best_tau, best_sigma = ordered[0]
    for tau, sigma in ordered[1:]:
        if sigma < best_sigma:
            best_tau, best_sigma = tau, sigma
    return best_tau


def detect_linear_drift(trace: CountTrace) -> tuple[float, float]:
    """Least-squares slope of the rate series versus time, and its
    significance (|slope| / slope standard error) against Poisson-scale
    noise on each bin."""
    if len(trace) < 10:
        raise ParameterError("counts: drift detection needs at least 10 bins")
    t = trace.times_s
    y = trace.counts / trace.bin_duration_s
    tc = t - t.mean()
    sxx = float(tc @ tc)
    slope = float(tc @ (y - y.mean())) / sxx
    sigma_bin = np.sqrt(max(y.mean(), 1e-300) / trace.bin_duration_s)
    se = sigma_bin / np.sqrt(sxx)
    significance = abs(slope) / se if se > 0 else np.inf
    return slope, float(significance)


def curve_to_csv(curve, path) -> None:
    with open(path, "w") as f:
        f.write("tau_s,sigma_rel\n")
        for tau, sigma in curve:
            f.write(f"{tau!r},{sigma!r}\n")
