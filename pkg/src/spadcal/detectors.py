"""Detector models: a click detector (SPAD) with efficiency, non-paralyzable
dead time, afterpulsing and dark counts, and an analog reference photodiode
(LNPD) with responsivity, offset, drift and readout noise."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .constants import HC
from .errors import ParameterError
from .streams import PS_PER_S, TimestampStream, to_ps, write_binary

DARK_WEIGHT_WARN = 1e-3


@dataclass(frozen=True)
class SpadModel:
    """Click-detector parameters.

    eta0            intrinsic detection efficiency, (0, 1]
    dead_time_s     non-paralyzable dead time after each registered click
    p_after         probability that a registered click spawns an afterpulse
    after_delay_mean_s   mean of the exponential afterpulse delay beyond the
                         dead time (the afterpulse lands at click + D + Exp)
    dark_rate_cps   Poisson dark-count rate; dark events fire with unit
                    probability (they originate inside the avalanche region)
    """

    eta0: float
    dead_time_s: float
    p_after: float = 0.0
    after_delay_mean_s: float = 5e-9
    dark_rate_cps: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.eta0 <= 1.0:
            raise ParameterError("eta0: must be in (0, 1]")
        if self.dead_time_s <= 0:
            raise ParameterError("dead_time_s: must be > 0")
        if not 0.0 <= self.p_after < 1.0:
            raise ParameterError("p_after: must be in [0, 1)")
        if self.after_delay_mean_s < 0:
            raise ParameterError("after_delay_mean_s: must be >= 0")
        if self.dark_rate_cps < 0:
            raise ParameterError("dark_rate_cps: must be >= 0")
        if self.dark_rate_cps * self.dead_time_s > DARK_WEIGHT_WARN:
            warnings.warn(
                f"dark_rate * dead_time = {self.dark_rate_cps * self.dead_time_s:.2e} "
                f"exceeds {DARK_WEIGHT_WARN}; dark/dead-time interplay is not negligible",
                stacklevel=2,
            )


@dataclass(frozen=True)
class LnpdModel:
    """Analog reference detector: U = S * P + U0 + drift * t + noise."""

    responsivity_v_per_w: float
    responsivity_rel_u: float = 0.0
    offset_v: float = 0.0
    offset_drift_v_per_s: float = 0.0
    noise_sd_v: float = 0.0

    def __post_init__(self):
        if self.responsivity_v_per_w <= 0:
            raise ParameterError("responsivity_v_per_w: must be > 0")
        if self.responsivity_rel_u < 0:
            raise ParameterError("responsivity_rel_u: must be >= 0")
        if self.noise_sd_v < 0:
            raise ParameterError("noise_sd_v: must be >= 0")


@dataclass(frozen=True)
class ClickStream:
    """Detector output stream plus bookkeeping counters.

    The counters partition the clicks exactly:
    clicks == photon_clicks + afterpulse_clicks + dark_clicks.
    clicks_lost_to_deadtime counts would-be clicks (photons that passed the
    efficiency draw, dark events, afterpulse candidates) suppressed by the
    dead window.
    """

    stream: TimestampStream
    photons_in: int
    clicks: int
    clicks_lost_to_deadtime: int
    afterpulse_clicks: int
    dark_clicks: int
    origins: np.ndarray = None  # per click: 0 photon, 1 dark, 2 afterpulse

    @property
    def photon_clicks(self) -> int:
        return self.clicks - self.afterpulse_clicks - self.dark_clicks

    @property
    def times_ps(self) -> np.ndarray:
        return self.stream.times_ps

    @property
    def duration_s(self) -> float:
        return self.stream.duration_s

    @property
    def rate_cps(self) -> float:
        return self.stream.rate_cps

    def counters(self) -> dict:
        return {
            "photons_in": self.photons_in,
            "clicks": self.clicks,
            "clicks_lost_to_deadtime": self.clicks_lost_to_deadtime,
            "afterpulse_clicks": self.afterpulse_clicks,
            "dark_clicks": self.dark_clicks,
        }


def write_clickstream(clicks: ClickStream, path, sidecar_path=None, extra=None) -> None:
    """Serialize like a TimestampStream plus a JSON sidecar with counters."""
    write_binary(clicks.stream, path)
    sidecar = sidecar_path or (str(path) + ".json")
    payload = dict(extra or {})
    payload.update(clicks.counters())
    payload["duration_s"] = clicks.stream.duration_s
    payload["origin"] = clicks.stream.origin
    with open(sidecar, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


_PENDING_CAP = 4096


@njit(cache=True)
def _detect_core(times, u, eta0, dead_ps, p_after, ap_mean_ps, duration_ps, rng_seed,
                 out_times, out_origin):
    """Sequential scan: merge input events with dynamically spawned afterpulse
    candidates, gate everything on the non-paralyzable dead window.

    u[i] < eta0 decides detection; dark events carry u = -1 (always detected).
    Returns (n_clicks, lost_to_deadtime, afterpulses, darks, status); status 1
    means the output buffer was too small, 2 means the pending-candidate
    buffer overflowed.
    """
    np.random.seed(rng_seed)
    cap = out_times.size
    pend = np.empty(_PENDING_CAP, np.int64)
    npend = 0
    next_free = np.int64(-1)
    nclick = 0
    lost = 0
    nap = 0
    ndark = 0
    i = 0
    n = times.size
    while i < n or npend > 0:
        if npend > 0 and (i >= n or pend[0] <= times[i]):
            t = pend[0]
            for k in range(1, npend):
                pend[k - 1] = pend[k]
            npend -= 1
            origin = 2  # afterpulse candidate
        else:
            t = times[i]
            if u[i] >= eta0:  # photon missed by the efficiency draw
                i += 1
                continue
            origin = 1 if u[i] < 0.0 else 0
            i += 1
        if t < next_free:
            lost += 1
            continue
        if nclick >= cap:
            return nclick, lost, nap, ndark, 1
        out_times[nclick] = t
        out_origin[nclick] = origin
        nclick += 1
        if origin == 2:
            nap += 1
        elif origin == 1:
            ndark += 1
        next_free = t + dead_ps
        if p_after > 0.0 and np.random.random() < p_after:
            cand = t + dead_ps + np.int64(np.random.exponential(ap_mean_ps) + 0.5)
            if cand <= duration_ps:
                if npend >= _PENDING_CAP:
                    return nclick, lost, nap, ndark, 2
                j = npend
                while j > 0 and pend[j - 1] > cand:
                    pend[j] = pend[j - 1]
                    j -= 1
                pend[j] = cand
                npend += 1
    return nclick, lost, nap, ndark, 0


def detect(photons: TimestampStream, model: SpadModel, seed: int) -> ClickStream:
    """Run the SPAD model over a photon stream.

    The photon stream is merged with a Poisson dark-count process; every
    merged event is registered iff it falls outside the dead window
    [last_click, last_click + D) and (photons only) survives the efficiency
    draw. Each registered click may spawn an afterpulse candidate at
    click + D + Exp(after_delay_mean), itself subject to dead-time gating;
    afterpulse clicks spawn further candidates the same way.
    """
    rng = np.random.default_rng(seed)
    duration_ps = photons.duration_ps
    n_dark = rng.poisson(model.dark_rate_cps * photons.duration_s)
    dark_times = np.sort(rng.integers(0, duration_ps + 1, size=n_dark, dtype=np.int64))
    times = np.concatenate([photons.times_ps, dark_times])
    u = np.concatenate([rng.random(len(photons)), np.full(n_dark, -1.0)])
    order = np.argsort(times, kind="stable")
    times = np.ascontiguousarray(times[order])
    u = np.ascontiguousarray(u[order])
    core_seed = int(rng.integers(0, 2**31 - 1))

    dead_ps = to_ps(model.dead_time_s)
    ap_mean_ps = model.after_delay_mean_s * PS_PER_S
    cap = times.size + 1024
    while True:
        out_times = np.empty(cap, dtype=np.int64)
        out_origin = np.empty(cap, dtype=np.int8)
        nclick, lost, nap, ndark, status = _detect_core(
            times, u, model.eta0, dead_ps, model.p_after, ap_mean_ps,
            duration_ps, core_seed, out_times, out_origin,
        )
        if status == 0:
            break
        if status == 2:
            raise RuntimeError("afterpulse candidate buffer overflow")
        cap *= 2  # rerun deterministically with a larger click buffer

    stream = TimestampStream(out_times[:nclick].copy(), duration_ps, "spad")
    return ClickStream(
        stream=stream,
        photons_in=len(photons),
        clicks=nclick,
        clicks_lost_to_deadtime=lost,
        afterpulse_clicks=nap,
        dark_clicks=ndark,
        origins=out_origin[:nclick].copy(),
    )


def lnpd_read(photon_rate_pps: float, wavelength_m: float, model: LnpdModel,
              t_s: float, seed: int) -> float:
    """One LNPD voltage reading: S * (rate * hc / wavelength) + U0 + drift * t
    + Gaussian readout noise."""
    if photon_rate_pps < 0:
        raise ParameterError("photon_rate_pps: must be >= 0")
    power_w = photon_rate_pps * HC / wavelength_m
    noise = 0.0
    if model.noise_sd_v > 0:
        noise = np.random.default_rng(seed).normal(0.0, model.noise_sd_v)
    return model.responsivity_v_per_w * power_w + model.offset_v \
        + model.offset_drift_v_per_s * t_s + noise


def dark_correction_weight(model: SpadModel) -> float:
    """Product dark_rate * dead_time; the scale of the neglected
    dark/dead-time interplay."""
    return model.dark_rate_cps * model.dead_time_s
