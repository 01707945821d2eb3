"""Photon-source models with controllable statistics.

Three source classes share a common currency (TimestampStream): a pulsed
single-photon source with a truncated per-pulse number distribution, a pulsed
attenuated laser with Poissonian pulses, and a CW single-photon source
realized as an antibunched renewal process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EmptyStreamError, ParameterError, SignalDomainError
from .streams import PS_PER_S, TimestampStream, make_strictly_increasing, to_ps

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class PulsedSps:
    """Triggered single-photon source: per pulse, 0/1/2 photons with
    probabilities (p0, p1, p2); emission delay after the trigger is
    exponential with the emitter lifetime."""

    rep_rate_hz: float
    p0: float
    p1: float
    p2: float
    lifetime_s: float = 4e-9

    def __post_init__(self):
        if self.rep_rate_hz <= 0:
            raise ParameterError("rep_rate_hz: must be > 0")
        for name in ("p0", "p1", "p2"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name}: probability must be in [0, 1]")
        if abs(self.p0 + self.p1 + self.p2 - 1.0) > _PROB_TOL:
            raise ParameterError(
                f"p0+p1+p2: must sum to 1 within {_PROB_TOL} (got {self.p0 + self.p1 + self.p2!r})"
            )
        if self.p2 > self.p1:
            raise ParameterError("p2: must not exceed p1 (sub-Poissonian regime)")
        if self.lifetime_s <= 0:
            raise ParameterError("lifetime_s: must be > 0")

    @property
    def mean_photons_per_pulse(self) -> float:
        return self.p1 + 2.0 * self.p2

    def g2_zero(self) -> float:
        return per_pulse_g2_zero(self.p1, self.p2)


@dataclass(frozen=True)
class PulsedLaser:
    """Attenuated pulsed laser: per pulse, Poisson(mu) photons spread
    uniformly over the pulse width."""

    rep_rate_hz: float
    mean_photons: float
    pulse_width_s: float = 50e-12

    def __post_init__(self):
        if self.rep_rate_hz <= 0:
            raise ParameterError("rep_rate_hz: must be > 0")
        if self.mean_photons < 0:
            raise ParameterError("mean_photons: must be >= 0")
        if self.pulse_width_s <= 0:
            raise ParameterError("pulse_width_s: must be > 0")


@dataclass(frozen=True)
class CwSps:
    """CW single-photon source: renewal process whose inter-photon gap is a
    re-excitation stage plus an exponential emission stage (lifetime), so the
    gap density vanishes at zero lag (antibunching) and the long-run rate is
    rate_pps."""

    rate_pps: float
    lifetime_s: float = 4e-9

    def __post_init__(self):
        if self.rate_pps < 0:
            raise ParameterError("rate_pps: must be >= 0")
        if self.lifetime_s <= 0:
            raise ParameterError("lifetime_s: must be > 0")
        if self.rate_pps * self.lifetime_s >= 1.0:
            raise ParameterError(
                "rate_pps: rate * lifetime must be < 1 (emitter cannot emit faster than its cycle)"
            )


SourceSpec = Union[PulsedSps, PulsedLaser, CwSps]


def per_pulse_g2_zero(p1: float, p2: float) -> float:
    """Zero-delay autocorrelation <n(n-1)>/<n>^2 of the (p0, p1, p2) pulse
    distribution: 2*p2 / (p1 + 2*p2)^2."""
    mean = p1 + 2.0 * p2
    if mean == 0.0:
        raise SignalDomainError("g2[0] undefined: mean photon number per pulse is zero")
    return 2.0 * p2 / mean**2


def dist_from_g2(mean_photons: float, g2_zero: float) -> tuple[float, float, float]:
    """Invert per_pulse_g2_zero: find (p0, p1, p2) with the requested mean
    photon number per pulse and g2[0]."""
    if mean_photons <= 0:
        raise ParameterError("mean_photons: must be > 0")
    if g2_zero < 0:
        raise ParameterError("g2_zero: must be >= 0")
    p2 = g2_zero * mean_photons**2 / 2.0
    p1 = mean_photons - 2.0 * p2
    p0 = 1.0 - p1 - p2
    if p1 < 0 or p0 < 0 or p2 > p1:
        raise ParameterError("g2_zero: no valid sub-Poissonian (p0, p1, p2) for these inputs")
    return p0, p1, p2


def _n_pulses(rep_rate_hz: float, duration_s: float) -> int:
    n = int(math.floor(duration_s * rep_rate_hz + 1e-9))
    if n < 1:
        raise EmptyStreamError(
            f"duration {duration_s} s is shorter than one trigger period (1/R = {1 / rep_rate_hz} s)"
        )
    return n


def _bernoulli_indices(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Indices of successes of a Bernoulli(p) process over n slots, built from
    geometric gaps so only the successes are materialized."""
    if p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    chunks = []
    pos = -1
    expected = p * n
    block = int(expected * 1.05 + 10.0 * math.sqrt(expected + 1.0) + 64)
    while pos < n - 1:
        gaps = rng.geometric(p, size=block).astype(np.int64)
        idx = pos + np.cumsum(gaps)
        chunks.append(idx)
        pos = int(idx[-1])
        block = 1024
    idx = np.concatenate(chunks)
    return idx[idx < n]


def generate_pulsed_sps(spec: PulsedSps, duration_s: float, seed: int) -> TimestampStream:
    """Emit a photon stream for the triggered single-photon source.

    Per trigger at k/R the photon number is drawn from (p0, p1, p2); every
    photon gets an independent exponential emission delay; a two-photon pulse
    yields two distinct events.
    """
    rng = np.random.default_rng(seed)
    n = _n_pulses(spec.rep_rate_hz, duration_s)
    duration_ps = to_ps(duration_s)
    p_emit = spec.p1 + spec.p2
    pulse_idx = _bernoulli_indices(rng, n, p_emit)
    if pulse_idx.size == 0:
        return TimestampStream(np.empty(0, dtype=np.int64), duration_ps, "pulsed_sps")
    is_double = rng.random(pulse_idx.size) < (spec.p2 / p_emit)
    period_ps = PS_PER_S / spec.rep_rate_hz
    triggers = np.round(pulse_idx.astype(np.float64) * period_ps)
    tau_ps = spec.lifetime_s * PS_PER_S
    first = triggers + rng.exponential(tau_ps, size=pulse_idx.size)
    second = triggers[is_double] + rng.exponential(tau_ps, size=int(is_double.sum()))
    times = np.round(np.concatenate([first, second])).astype(np.int64)
    return TimestampStream(make_strictly_increasing(times, duration_ps), duration_ps, "pulsed_sps")


def generate_pulsed_laser(spec: PulsedLaser, duration_s: float, seed: int) -> TimestampStream:
    """Emit a photon stream for the pulsed laser.

    Uses Poisson splitting: the total count over N pulses is Poisson(N*mu)
    and each photon lands on a uniformly random pulse, which is exactly
    equivalent to independent Poisson(mu) draws per pulse.
    """
    rng = np.random.default_rng(seed)
    n = _n_pulses(spec.rep_rate_hz, duration_s)
    duration_ps = to_ps(duration_s)
    if spec.mean_photons == 0.0:
        return TimestampStream(np.empty(0, dtype=np.int64), duration_ps, "pulsed_laser")
    total = rng.poisson(n * spec.mean_photons)
    pulse_idx = rng.integers(0, n, size=total)
    period_ps = PS_PER_S / spec.rep_rate_hz
    jitter = rng.random(total) * (spec.pulse_width_s * PS_PER_S)
    times = np.round(pulse_idx.astype(np.float64) * period_ps + jitter).astype(np.int64)
    return TimestampStream(make_strictly_increasing(times, duration_ps), duration_ps, "pulsed_laser")


def generate_cw_sps(spec: CwSps, duration_s: float, seed: int) -> TimestampStream:
    """Emit a photon stream for the CW single-photon source.

    Gaps are Exp(1/r - lifetime) + Exp(lifetime): mean gap 1/r, density zero
    at zero lag.
    """
    rng = np.random.default_rng(seed)
    duration_ps = to_ps(duration_s)
    if spec.rate_pps == 0.0:
        return TimestampStream(np.empty(0, dtype=np.int64), duration_ps, "cw_sps")
    tau_ps = spec.lifetime_s * PS_PER_S
    theta_ps = (1.0 / spec.rate_pps) * PS_PER_S - tau_ps
    expected = spec.rate_pps * duration_s
    block = int(expected * 1.05 + 10.0 * math.sqrt(expected + 1.0) + 64)
    chunks = []
    t_last = 0.0
    while t_last <= duration_ps:
        gaps = rng.exponential(theta_ps, size=block) + rng.exponential(tau_ps, size=block)
        times = t_last + np.cumsum(gaps)
        chunks.append(times)
        t_last = float(times[-1])
        block = 4096
    times = np.concatenate(chunks)
    times = np.round(times[times <= duration_ps]).astype(np.int64)
    return TimestampStream(make_strictly_increasing(times, duration_ps), duration_ps, "cw_sps")


def generate(spec: SourceSpec, duration_s: float, seed: int) -> TimestampStream:
    """Dispatch to the generator for the given source spec."""
    if isinstance(spec, PulsedSps):
        return generate_pulsed_sps(spec, duration_s, seed)
    if isinstance(spec, PulsedLaser):
        return generate_pulsed_laser(spec, duration_s, seed)
    if isinstance(spec, CwSps):
        return generate_cw_sps(spec, duration_s, seed)
    raise ParameterError(f"spec: unknown source type {type(spec).__name__}")
