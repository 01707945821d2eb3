"""Closed-form dead-time response of a non-paralyzable click detector for the
three source classes, extraction of the intrinsic efficiency by weighted
nonlinear least squares, and inverse-variance averaging.

Every click suppresses the Int[R*D] trigger pulses falling inside the dead
window, so with per-trigger click probability q the measured efficiency is

    eta = (R / flux) * q / (1 + Int[R*D] * q)

which specializes per source:
    pulsed laser        flux = R*mu,    q = 1 - exp(-mu*eta0)
    pulsed SPS          flux = R*eta_s, q = eta_s * eta0
    CW SPS              flux = r,       Int[R*D]*q -> r*D*eta0
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, SingularFitError
from .fitting import least_squares

GUARD_ZONE_REL = 0.02  # R*D within 2% of a positive integer: no well-defined behavior


@dataclass(frozen=True)
class PulsedLaserModel:
    mean_photons: float
    dead_time_s: float

    def __post_init__(self):
        if self.mean_photons < 0:
            raise ParameterError("mean_photons: must be >= 0")
        if self.dead_time_s <= 0:
            raise ParameterError("dead_time_s: must be > 0")


@dataclass(frozen=True)
class PulsedSpsModel:
    eta_s: float
    dead_time_s: float

    def __post_init__(self):
        if not 0.0 < self.eta_s <= 1.0:
            raise ParameterError("eta_s: must be in (0, 1]")
        if self.dead_time_s <= 0:
            raise ParameterError("dead_time_s: must be > 0")


@dataclass(frozen=True)
class CwSpsModel:
    dead_time_s: float

    def __post_init__(self):
        if self.dead_time_s <= 0:
            raise ParameterError("dead_time_s: must be > 0")


DeadTimeModel = PulsedLaserModel | PulsedSpsModel | CwSpsModel


class ModelEval(NamedTuple):
    eta: float
    in_guard_zone: bool


def _int_rd(rep_rate_hz: float, dead_time_s: float) -> tuple[int, bool]:
    x = rep_rate_hz * dead_time_s
    nearest = round(x)
    guard = nearest >= 1 and abs(x - nearest) <= GUARD_ZONE_REL * nearest
    return int(math.floor(x)), guard


def generic_response(flux_pps: float, rep_rate_hz: float, q: float, int_rd: int) -> float:
    """Generic non-paralyzable response (R/flux) * q / (1 + Int[R*D] * q)."""
    return (rep_rate_hz / flux_pps) * q / (1.0 + int_rd * q)


def eta_model(model: DeadTimeModel, eta0: float, rate_hz: float,
              implicit_psps: bool = False) -> ModelEval:
    """Measured efficiency predicted for intrinsic efficiency eta0 at trigger
    rate R (pulsed) or photon rate r (CW).

    For the pulsed SPS the explicit form eta0 / (1 + Int[R*D] eta_s eta0) is
    the default; implicit_psps selects the alternate self-consistent form
    eta = eta0 / (1 + Int[R*D] eta_s eta), solved exactly (the two differ at
    second order in eta_s).
    """
    if not 0.0 < eta0 <= 1.0:
        raise ParameterError("eta0: must be in (0, 1]")
    if rate_hz <= 0:
        raise ParameterError("rate_hz: must be > 0")
    if isinstance(model, CwSpsModel):
        return ModelEval(eta0 / (1.0 + rate_hz * model.dead_time_s * eta0), False)
    n, guard = _int_rd(rate_hz, model.dead_time_s)
    if isinstance(model, PulsedLaserModel):
        mu = model.mean_photons
        if mu == 0.0:
            return ModelEval(eta0, guard)  # limit mu -> 0
        q = 1.0 - math.exp(-mu * eta0)
        return ModelEval((1.0 / mu) * q / (1.0 + n * q), guard)
    if isinstance(model, PulsedSpsModel):
        if implicit_psps:
            if n == 0:
                return ModelEval(eta0, guard)
            a = n * model.eta_s
            eta = (-1.0 + math.sqrt(1.0 + 4.0 * a * eta0)) / (2.0 * a)
            return ModelEval(eta, guard)
        return ModelEval(eta0 / (1.0 + n * model.eta_s * eta0), guard)
    raise ParameterError(f"model: unknown dead-time model {type(model).__name__}")


class GapResult(NamedTuple):
    exact: float
    leading_order: float


def poissonian_gap(mu: float, eta0: float) -> GapResult:
    """Efficiency deficit of Poissonian pulses against an ideal single-photon
    source at the same mean photon number: exact value eta0 - (1-e^(-mu
    eta0))/mu and its leading Taylor term mu * eta0^2 / 2."""
    if mu < 0:
        raise ParameterError("mu: must be >= 0")
    leading = mu * eta0**2 / 2.0
    if mu == 0.0:
        return GapResult(0.0, 0.0)
    exact = eta0 - (1.0 - math.exp(-mu * eta0)) / mu
    return GapResult(exact, leading)


@dataclass
class FitResult:
    """Outcome of an intrinsic-efficiency fit."""

    eta0: float
    uncertainty: float
    covariance: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    chisq: float
    converged: bool
    iterations: int
    n_points: int
    excluded_rates: tuple = ()

    def to_json(self, path=None):
        payload = {
            "eta0": self.eta0,
            "uncertainty": self.uncertainty,
            "covariance": np.asarray(self.covariance).tolist(),
            "residuals": np.asarray(self.residuals).tolist(),
            "chisq": self.chisq,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_points": self.n_points,
            "excluded_rates": list(self.excluded_rates),
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
                f.write("\n")
        return payload


def _model_for(family: str, fixed: dict) -> "DeadTimeModel | None":
    if family == "pulsed_laser":
        return PulsedLaserModel(fixed["mean_photons"], fixed["dead_time_s"])
    if family == "pulsed_sps":
        return PulsedSpsModel(fixed["eta_s"], fixed["dead_time_s"])
    if family == "cw_sps":
        return CwSpsModel(fixed["dead_time_s"])
    raise ParameterError(f"model family: unknown {family!r}")


def fit_eta0(data, family: str, fixed: dict, initial_guess: float | None = None,
             mode: str = "full", exclude_guard_zone: bool = True) -> FitResult:
    """Fit eta0 to (rate, eta, u_eta) points with weights 1/u^2.

    Points in the guard zone (R*D within 2% of an integer, where the step
    position is not well determined) are excluded with a warning. Data are
    sorted internally so the result does not depend on input ordering.
    mode='linear_intercept' fits the CW low-rate approximation
    eta = eta0 - eta0^2 * D * r and reports the intercept.
    """
    pts = sorted((float(x), float(e), float(u)) for x, e, u in data)
    if any(u <= 0 for _, _, u in pts):
        raise ParameterError("u_eta: all uncertainties must be > 0")
    model = _model_for(family, fixed)
    excluded = ()
    if exclude_guard_zone and not isinstance(model, CwSpsModel):
        flagged = [x for x, _, _ in pts if _int_rd(x, model.dead_time_s)[1]]
        if flagged:
            warnings.warn(
                f"excluding {len(flagged)} point(s) in the R*D guard zone: {flagged}",
                stacklevel=2,
            )
            excluded = tuple(flagged)
            pts = [p for p in pts if p[0] not in set(flagged)]
    if len(pts) < 2:
        raise ParameterError("data: need at least 2 usable points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    u = np.array([p[2] for p in pts])

    if mode == "linear_intercept":
        if not isinstance(model, CwSpsModel):
            raise ParameterError("mode: linear_intercept applies to the cw_sps family")
        w = 1.0 / u**2
        dm = np.column_stack([np.ones_like(x), -x])
        a = dm.T @ (dm * w[:, None])
        b = dm.T @ (w * y)
        if np.linalg.matrix_rank(a) < 2:
            raise SingularFitError("linear intercept fit needs at least two distinct rates")
        cov = np.linalg.inv(a)
        coef = cov @ b
        resid = (dm @ coef - y) / u
        return FitResult(
            eta0=float(coef[0]),
            uncertainty=float(np.sqrt(cov[0, 0])),
            covariance=cov,
            residuals=resid,
            chisq=float(resid @ resid),
            converged=True,
            iterations=0,
            n_points=len(pts),
            excluded_rates=excluded,
        )
    if mode != "full":
        raise ParameterError(f"mode: unknown {mode!r}")

    def residuals(params):
        eta0 = min(max(params[0], 1e-9), 1.0)
        pred = np.array([eta_model(model, eta0, xi).eta for xi in x])
        return (pred - y) / u

    x0 = np.array([initial_guess if initial_guess is not None else min(max(y.max(), 0.01), 1.0)])
    result = least_squares(residuals, x0, max_iter=100, dx_tol=1e-8)
    return FitResult(
        eta0=float(result.params[0]),
        uncertainty=float(np.sqrt(result.covariance[0, 0])),
        covariance=result.covariance,
        residuals=result.residuals,
        chisq=result.chisq,
        converged=result.converged,
        iterations=result.iterations,
        n_points=len(pts),
        excluded_rates=excluded,
    )


def weighted_average(estimates) -> tuple[float, float]:
    """Inverse-variance weighted mean and its standard uncertainty."""
    pairs = list(estimates)
    if not pairs:
        raise ParameterError("estimates: must not be empty")
    if any(u <= 0 for _, u in pairs):
        raise ParameterError("estimates: all uncertainties must be > 0")
    weights = [1.0 / u**2 for _, u in pairs]
    total = sum(weights)
    mean = sum(w * v for (v, _), w in zip(pairs, weights)) / total
    return mean, 1.0 / math.sqrt(total)
