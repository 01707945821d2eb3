"""Detection-efficiency calibration against the analog reference detector:
sequenced SPAD/LNPD measurement records, afterpulsing / multi-photon / dark
corrections, and a first-order (GUM-style) uncertainty budget.

The estimator is

    eta = (hc / lambda) * S * ((N1 + N2)/2 - N_DC) / (U - (U01 + U02)/2)
          * (1 - p_A) / (1 - eps),

with eps = g2[0]/2 * flux / R computed from the measured flux. Bracketing the
LNPD reading with two SPAD readings (and the SPAD readings with two LNPD
zero-level readings) cancels linear drifts of both the photon flux and the
LNPD offset.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace, asdict

import numpy as np

from .constants import HC
from .detectors import LnpdModel, SpadModel, detect, lnpd_read
from .errors import ParameterError, SignalBelowBackgroundError, SignalDomainError
from .sources import CwSps, PulsedLaser, PulsedSps, SourceSpec, generate, per_pulse_g2_zero
from .streams import TimestampStream, to_ps


@dataclass(frozen=True)
class MeasurementSequence:
    """One bracketed calibration sequence: SPAD - LNPD - SPAD, with reference
    levels (LNPD zero signal, SPAD dark rate) taken while the light is on the
    other device."""

    step_duration_s: float
    n_click_1_cps: float
    u_volt: float
    n_click_2_cps: float
    n_dark_cps: float
    u0_1_volt: float
    u0_2_volt: float
    wavelength_m: float
    wavelength_u_m: float = 0.1e-9
    rep_rate_hz: float | None = None  # None for CW sources: no per-pulse correction
    g2_zero: float = 0.0
    g2_zero_u: float = 0.0
    p_a: float = 0.0
    p_a_u: float = 0.0

    def __post_init__(self):
        if self.step_duration_s <= 0:
            raise ParameterError("step_duration_s: must be > 0")
        for name in ("n_click_1_cps", "n_click_2_cps", "n_dark_cps"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name}: must be >= 0")
        if not 100e-9 < self.wavelength_m < 10e-6:
            raise ParameterError("wavelength_m: outside the (100 nm, 10 um) sanity band")
        if self.rep_rate_hz is not None and self.rep_rate_hz <= 0:
            raise ParameterError("rep_rate_hz: must be > 0 when given")
        if not 0.0 <= self.p_a < 1.0:
            raise ParameterError("p_a: must be in [0, 1)")
        if self.g2_zero < 0:
            raise ParameterError("g2_zero: must be >= 0")

    def to_json(self, path=None):
        payload = asdict(self)
        if path is not None:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
                f.write("\n")
        return payload

    @classmethod
    def from_json(cls, source) -> "MeasurementSequence":
        if isinstance(source, dict):
            return cls(**source)
        with open(source) as f:
            return cls(**json.load(f))


@dataclass(frozen=True)
class EfficiencyEstimate:
    """Measured efficiency with its decomposed uncertainty budget.

    budget holds (component name, relative contribution u_i / eta); the
    combined relative uncertainty is the quadrature sum of the entries.
    """

    eta: float
    u_eta: float
    budget: tuple
    flux_pps: float
    power_w: float
    epsilon: float

    def relative_u(self) -> float:
        return self.u_eta / self.eta

    def to_json(self, path=None):
        payload = {
            "eta": self.eta,
            "u_eta": self.u_eta,
            "relative_u": self.relative_u(),
            "budget": [[name, value] for name, value in self.budget],
            "flux_pps": self.flux_pps,
            "power_w": self.power_w,
            "epsilon": self.epsilon,
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
                f.write("\n")
        return payload


def multi_photon_epsilon(g2_zero: float, flux_pps: float, rep_rate_hz: float) -> float:
    """Probability-weighted multi-photon term: eps = g2[0]/2 * flux / R."""
    if g2_zero < 0 or flux_pps < 0:
        raise ParameterError("g2_zero, flux_pps: must be >= 0")
    if rep_rate_hz <= 0:
        raise ParameterError("rep_rate_hz: must be > 0")
    return 0.5 * g2_zero * flux_pps / rep_rate_hz


def flux_from_lnpd(u_volt: float, u0_volt: float, lnpd: LnpdModel, wavelength_m: float) -> float:
    """Photon flux from the LNPD voltage: (lambda / hc) * (U - U0) / S."""
    if u_volt <= u0_volt:
        raise SignalBelowBackgroundError(
            f"LNPD signal {u_volt!r} V does not exceed the zero-flux level {u0_volt!r} V"
        )
    return (wavelength_m / HC) * (u_volt - u0_volt) / lnpd.responsivity_v_per_w


def calibrate(seq: MeasurementSequence, lnpd: LnpdModel,
              apply_epsilon: bool = True, apply_p_a: bool = True) -> EfficiencyEstimate:
    """Evaluate the corrected efficiency estimator and its uncertainty budget.

    Budget components (zero-weight entries are dropped):
      click_statistics   Poisson noise of the two bracketing SPAD readings
      dark_counts        Poisson noise of the dark-rate reference
      lnpd_voltage_noise readout noise of U and the two U0 readings
      u0_drift_residual  offset-drift residual after bracketed averaging
      lnpd_responsivity  calibration uncertainty of S
      wavelength         photon-energy scale
      afterpulsing       uncertainty of p_A
      multi_photon_g2    uncertainty of g2[0] through eps
    """
    lam = seq.wavelength_m
    su = lnpd.responsivity_v_per_w
    c_rate = 0.5 * (seq.n_click_1_cps + seq.n_click_2_cps)
    net_rate = c_rate - seq.n_dark_cps
    u0_mean = 0.5 * (seq.u0_1_volt + seq.u0_2_volt)
    v = seq.u_volt - u0_mean
    if v <= 0:
        raise SignalBelowBackgroundError(
            f"U - mean(U0) = {v!r} V is not positive; no signal above background"
        )
    if net_rate <= 0:
        raise SignalDomainError(f"net click rate {net_rate!r} cps is not positive")

    flux = (lam / HC) * v / su
    power = v / su
    p_a = seq.p_a if apply_p_a else 0.0
    if apply_epsilon and seq.rep_rate_hz is not None:
        eps = multi_photon_epsilon(seq.g2_zero, flux, seq.rep_rate_hz)
    else:
        eps = 0.0
    if eps >= 1.0:
        raise SignalDomainError(f"multi-photon term eps = {eps!r} >= 1")

    eta = (HC / lam) * su * net_rate / v * (1.0 - p_a) / (1.0 - eps)
    if not 0.0 < eta < 1.0:
        raise SignalDomainError(
            f"eta = {eta!r} outside (0, 1); inputs: net_rate={net_rate!r} cps, "
            f"V={v!r} V, S={su!r} V/W, lambda={lam!r} m, p_A={p_a!r}, eps={eps!r}"
        )

    # Sensitivities. eps is itself a function of (lambda, U, U0, S) through
    # the flux, so those carry an extra (1 - 2 eps)/(1 - eps) factor.
    k_eps = (1.0 - 2.0 * eps) / (1.0 - eps)
    d_eta_d_c = eta / net_rate
    d_eta_d_dc = -eta / net_rate
    d_eta_d_v = -eta / v * k_eps
    d_eta_d_s = eta / su * k_eps
    d_eta_d_lam = -eta / lam * k_eps
    d_eta_d_pa = -eta / (1.0 - p_a) if apply_p_a else 0.0
    d_eta_d_g2 = eta * (eps / max(seq.g2_zero, 1e-300)) / (1.0 - eps) if eps > 0 else 0.0

    t_step = seq.step_duration_s
    u_n1 = math.sqrt(seq.n_click_1_cps / t_step)
    u_n2 = math.sqrt(seq.n_click_2_cps / t_step)
    u_c = 0.5 * math.sqrt(u_n1**2 + u_n2**2)
    u_dc = math.sqrt(seq.n_dark_cps / t_step)
    u_v_noise = lnpd.noise_sd_v * math.sqrt(1.0 + 0.5)  # U plus the averaged U0 pair
    u_u0_drift = abs(lnpd.offset_drift_v_per_s) * t_step / math.sqrt(12.0)
    u_s = su * lnpd.responsivity_rel_u

    components = [
        ("click_statistics", d_eta_d_c * u_c),
        ("dark_counts", d_eta_d_dc * u_dc),
        ("lnpd_voltage_noise", d_eta_d_v * u_v_noise),
        ("u0_drift_residual", d_eta_d_v * u_u0_drift),
        ("lnpd_responsivity", d_eta_d_s * u_s),
        ("wavelength", d_eta_d_lam * seq.wavelength_u_m),
        ("afterpulsing", d_eta_d_pa * seq.p_a_u),
        ("multi_photon_g2", d_eta_d_g2 * seq.g2_zero_u),
    ]
    budget = tuple((name, abs(value) / eta) for name, value in components if value != 0.0)
    u_eta = eta * math.sqrt(sum(rel**2 for _, rel in budget))
    return EfficiencyEstimate(
        eta=eta, u_eta=u_eta, budget=budget, flux_pps=flux, power_w=power, epsilon=eps
    )


@dataclass(frozen=True)
class SequenceProtocol:
    """Timing and bookkeeping of the simulated three-step sequence."""

    step_duration_s: float = 60.0
    flux_drift_per_s: float = 0.0  # relative flux drift rate
    wavelength_m: float = 784.7e-9
    wavelength_u_m: float = 0.1e-9
    g2_zero_u: float = 0.02
    p_a: float | None = None  # defaults to the SPAD model's p_after
    p_a_u: float | None = None  # defaults to 5% of p_a

    def __post_init__(self):
        if self.step_duration_s <= 0:
            raise ParameterError("step_duration_s: must be > 0")


def _scaled_source(spec: SourceSpec, factor: float) -> SourceSpec:
    if factor == 1.0:
        return spec
    if isinstance(spec, PulsedSps):
        p1, p2 = spec.p1 * factor, spec.p2 * factor
        return replace(spec, p0=1.0 - p1 - p2, p1=p1, p2=p2)
    if isinstance(spec, PulsedLaser):
        return replace(spec, mean_photons=spec.mean_photons * factor)
    return replace(spec, rate_pps=spec.rate_pps * factor)


def _source_g2_and_rate(spec: SourceSpec):
    if isinstance(spec, PulsedSps):
        return per_pulse_g2_zero(spec.p1, spec.p2), spec.rep_rate_hz
    if isinstance(spec, PulsedLaser):
        return 1.0, spec.rep_rate_hz
    return 0.0, None


def run_sequence_sim(source: SourceSpec, spad: SpadModel, lnpd: LnpdModel,
                     protocol: SequenceProtocol, seed: int) -> MeasurementSequence:
    """Simulate the bracketed sequence: light on the SPAD (step 1), on the
    LNPD (step 2), on the SPAD again (step 3); the idle device records its
    reference level in each step. A configured relative flux drift scales the
    source linearly across the three steps."""
    rng = np.random.default_rng(seed)
    t_step = protocol.step_duration_s
    mids = [0.5 * t_step, 1.5 * t_step, 2.5 * t_step]
    drift = protocol.flux_drift_per_s

    def spad_reading(step_mid: float, sub_seed: int) -> float:
        spec = _scaled_source(source, 1.0 + drift * step_mid)
        photons = generate(spec, t_step, sub_seed)
        return detect(photons, spad, sub_seed + 1).clicks / t_step

    seeds = rng.integers(0, 2**63 - 1, size=8)
    n1 = spad_reading(mids[0], int(seeds[0]))
    n2 = spad_reading(mids[2], int(seeds[1]))
    # dark reference while the light is on the LNPD
    empty = TimestampStream(np.empty(0, dtype=np.int64), to_ps(t_step), "dark_reference")
    n_dc = detect(empty, spad, int(seeds[2])).clicks / t_step

    if isinstance(source, CwSps):
        base_flux = source.rate_pps
    elif isinstance(source, PulsedLaser):
        base_flux = source.rep_rate_hz * source.mean_photons
    else:
        base_flux = source.rep_rate_hz * source.mean_photons_per_pulse
    u_volt = lnpd_read(base_flux * (1.0 + drift * mids[1]), protocol.wavelength_m,
                       lnpd, mids[1], int(seeds[3]))
    u0_1 = lnpd_read(0.0, protocol.wavelength_m, lnpd, mids[0], int(seeds[4]))
    u0_2 = lnpd_read(0.0, protocol.wavelength_m, lnpd, mids[2], int(seeds[5]))

    g2, rep_rate = _source_g2_and_rate(source)
    p_a = protocol.p_a if protocol.p_a is not None else spad.p_after
    p_a_u = protocol.p_a_u if protocol.p_a_u is not None else 0.05 * p_a
    return MeasurementSequence(
        step_duration_s=t_step,
        n_click_1_cps=n1,
        u_volt=u_volt,
        n_click_2_cps=n2,
        n_dark_cps=n_dc,
        u0_1_volt=u0_1,
        u0_2_volt=u0_2,
        wavelength_m=protocol.wavelength_m,
        wavelength_u_m=protocol.wavelength_u_m,
        rep_rate_hz=rep_rate,
        g2_zero=g2,
        g2_zero_u=protocol.g2_zero_u,
        p_a=p_a,
        p_a_u=p_a_u,
    )
