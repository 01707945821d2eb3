import math

import numpy as np
import pytest

from spadcal.deadtime import (
    CwSpsModel,
    PulsedLaserModel,
    PulsedSpsModel,
    eta_model,
    fit_eta0,
    generic_response,
    poissonian_gap,
    weighted_average,
)
from spadcal.errors import ParameterError, SingularFitError
from spadcal.fitting import numerical_jacobian


class TestEtaModel:
    def test_psps_plateau_is_exactly_eta0(self):
        m = PulsedSpsModel(eta_s=0.0227, dead_time_s=20e-9)
        # Int[0.4] = 0: the first step yields eta0 exactly, no other input
        assert eta_model(m, 0.665, 20e6).eta == 0.665
        assert eta_model(m, 0.665, 40e6).eta == 0.665

    def test_psps_first_step_down(self):
        m = PulsedSpsModel(eta_s=0.0227, dead_time_s=20e-9)
        assert eta_model(m, 0.665, 60e6).eta == pytest.approx(0.6551107752915859, rel=1e-12)

    def test_cw_value(self):
        m = CwSpsModel(dead_time_s=2e-8)
        assert eta_model(m, 0.66, 1e6).eta == pytest.approx(0.6514015001973944, rel=1e-12)

    def test_pl_value(self):
        m = PulsedLaserModel(mean_photons=0.02, dead_time_s=20e-9)
        got = eta_model(m, 0.66, 20e6).eta
        assert got == pytest.approx(0.6556631033174887, rel=1e-12)
        # sits below eta0 by ~ mu eta0^2 / 2
        assert 0.66 - got == pytest.approx(0.02 * 0.66**2 / 2, rel=0.01)

    def test_pl_zero_mu_limit(self):
        m = PulsedLaserModel(mean_photons=0.0, dead_time_s=20e-9)
        assert eta_model(m, 0.7, 20e6).eta == 0.7

    def test_guard_zone_flag_not_exception(self):
        m = PulsedSpsModel(eta_s=0.0227, dead_time_s=20e-9)
        assert eta_model(m, 0.665, 50e6).in_guard_zone  # R*D = 1.0
        assert eta_model(m, 0.665, 50.9e6).in_guard_zone  # R*D = 1.018, within 2%
        assert not eta_model(m, 0.665, 60e6).in_guard_zone
        assert not eta_model(m, 0.665, 20e6).in_guard_zone

    def test_step_structure_piecewise_constant(self):
        m = PulsedSpsModel(eta_s=0.0227, dead_time_s=20e-9)
        # within one step (Int[R*D] constant) the value is exactly equal
        within = [eta_model(m, 0.665, r).eta for r in (55e6, 60e6, 80e6, 99e6)]
        assert all(v == within[0] for v in within)
        below = [eta_model(m, 0.665, r).eta for r in (5e6, 20e6, 40e6, 48e6)]
        assert all(v == below[0] for v in below)
        assert within[0] < below[0]

    def test_table_forms_equal_generic_response(self):
        # the closed forms must equal (R/flux) q / (1 + Int[R*D] q) with
        # their (flux, q) substitutions to 1e-12
        eta0, d = 0.641, 20e-9
        for r in (10e6, 35e6, 60e6, 80e6, 130e6):
            n = int(math.floor(r * d))
            eta_s = 0.0227
            q = eta_s * eta0
            lhs = eta_model(PulsedSpsModel(eta_s, d), eta0, r).eta
            rhs = generic_response(r * eta_s, r, q, n)
            assert abs(lhs - rhs) < 1e-12
            mu = 0.09
            q = 1.0 - math.exp(-mu * eta0)
            lhs = eta_model(PulsedLaserModel(mu, d), eta0, r).eta
            rhs = generic_response(r * mu, r, q, n)
            assert abs(lhs - rhs) < 1e-12
        for rate in (1e5, 7e5, 2e6):
            # CW: Int[R*D] q -> r D eta0 with flux = r, R q = r eta0
            lhs = eta_model(CwSpsModel(d), eta0, rate).eta
            rhs = eta0 / (1.0 + rate * d * eta0)
            assert abs(lhs - rhs) < 1e-12

    def test_implicit_psps_form_second_order_close(self):
        m = PulsedSpsModel(eta_s=0.0227, dead_time_s=20e-9)
        explicit = eta_model(m, 0.665, 60e6).eta
        implicit = eta_model(m, 0.665, 60e6, implicit_psps=True).eta
        # self-consistent form satisfies eta = eta0/(1 + Int eta_s eta)
        assert implicit == pytest.approx(0.665 / (1 + 0.0227 * implicit), rel=1e-12)
        # difference is second order in eta_s * eta0
        assert implicit != explicit
        assert abs(implicit - explicit) < (0.0227 * 0.665) ** 2
        # at Int = 0 both collapse to eta0
        assert eta_model(m, 0.665, 20e6, implicit_psps=True).eta == 0.665

    def test_validation(self):
        m = PulsedSpsModel(eta_s=0.0227, dead_time_s=20e-9)
        with pytest.raises(ParameterError):
            eta_model(m, 0.0, 20e6)
        with pytest.raises(ParameterError):
            eta_model(m, 0.5, 0.0)
        with pytest.raises(ParameterError):
            PulsedSpsModel(eta_s=1.5, dead_time_s=1e-8)


class TestPoissonianGap:
    def test_paper_scale(self):
        gap = poissonian_gap(0.02, 0.66)
        assert gap.exact == pytest.approx(0.00433689668251136, rel=1e-12)
        assert gap.leading_order == pytest.approx(0.004356, rel=1e-9)

    def test_zero_mu(self):
        assert poissonian_gap(0.0, 0.66) == (0.0, 0.0)

    def test_series_degrades_at_large_mu(self):
        gap = poissonian_gap(0.4, 0.65)
        assert gap.exact == pytest.approx(0.07762896450891565, rel=1e-12)
        assert gap.leading_order == pytest.approx(0.0845, rel=1e-9)
        rel_err = (gap.leading_order - gap.exact) / gap.exact
        assert 0.05 < rel_err < 0.15  # ~10% series error at mu = 0.4


def synthetic_points(model, eta0, rates, noise_rel, seed):
    rng = np.random.default_rng(seed)
    pts = []
    for r in rates:
        eta = eta_model(model, eta0, r).eta
        u = eta * noise_rel
        pts.append((r, eta + rng.normal(0.0, u), u))
    return pts


class TestFitEta0:
    PSPS = PulsedSpsModel(eta_s=0.0227, dead_time_s=20e-9)
    FIXED = {"eta_s": 0.0227, "dead_time_s": 20e-9}

    def test_exact_data_recovers_parameters(self):
        rates = [20e6, 30e6, 40e6, 60e6, 80e6]
        pts = [(r, eta_model(self.PSPS, 0.665, r).eta, 0.002) for r in rates]
        fit = fit_eta0(pts, "pulsed_sps", self.FIXED)
        assert fit.converged
        assert fit.eta0 == pytest.approx(0.665, abs=1e-10)
        assert fit.chisq < 1e-16

    def test_noisy_psps_fit(self):
        rates = [20e6, 30e6, 40e6, 60e6, 80e6]
        pts = synthetic_points(self.PSPS, 0.665, rates, 0.003, seed=1)
        fit = fit_eta0(pts, "pulsed_sps", self.FIXED)
        assert abs(fit.eta0 - 0.665) < 3 * fit.uncertainty
        assert fit.uncertainty == pytest.approx(0.665 * 0.003 / math.sqrt(5), rel=0.05)

    def test_guard_zone_points_excluded(self):
        rates = [20e6, 30e6, 50e6, 60e6]  # 50 MHz sits at R*D = 1
        pts = [(r, eta_model(self.PSPS, 0.66, r).eta, 0.002) for r in rates]
        with pytest.warns(UserWarning, match="guard zone"):
            fit = fit_eta0(pts, "pulsed_sps", self.FIXED)
        assert fit.excluded_rates == (50e6,)
        assert fit.n_points == 3

    def test_reorder_invariance_bit_exact(self):
        rates = [20e6, 30e6, 40e6, 60e6, 80e6]
        pts = synthetic_points(self.PSPS, 0.66, rates, 0.004, seed=2)
        a = fit_eta0(pts, "pulsed_sps", self.FIXED)
        b = fit_eta0(list(reversed(pts)), "pulsed_sps", self.FIXED)
        c = fit_eta0([pts[2], pts[0], pts[4], pts[1], pts[3]], "pulsed_sps", self.FIXED)
        assert a.eta0 == b.eta0 == c.eta0
        assert a.uncertainty == b.uncertainty == c.uncertainty

    def test_jacobian_matches_finer_central_difference(self):
        rates = [20e6, 30e6, 40e6, 60e6, 80e6]
        pts = synthetic_points(self.PSPS, 0.66, rates, 0.004, seed=3)
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        u = np.array([p[2] for p in pts])

        def resid(params):
            return (np.array([eta_model(self.PSPS, params[0], xi).eta for xi in x]) - y) / u

        j1 = numerical_jacobian(resid, np.array([0.66]))
        j2 = numerical_jacobian(resid, np.array([0.66]), step_rel=1e-7)
        assert np.max(np.abs(j1 - j2) / np.abs(j2)) < 1e-6

    def test_cw_full_model_fit(self):
        model = CwSpsModel(dead_time_s=2e-8)
        rates = [1e5, 2e5, 4e5, 7e5, 1e6, 2e6]
        pts = synthetic_points(model, 0.660, rates, 0.01, seed=4)
        fit = fit_eta0(pts, "cw_sps", {"dead_time_s": 2e-8})
        assert abs(fit.eta0 - 0.660) < 3 * fit.uncertainty

    def test_cw_linear_intercept_mode(self):
        model = CwSpsModel(dead_time_s=2e-8)
        rates = [1e5, 2e5, 3e5, 5e5, 8e5]  # low-rate regime
        pts = [(r, eta_model(model, 0.660, r).eta, 0.660 * 0.01) for r in rates]
        fit = fit_eta0(pts, "cw_sps", {"dead_time_s": 2e-8}, mode="linear_intercept")
        assert fit.iterations == 0
        assert abs(fit.eta0 - 0.660) < fit.uncertainty
        with pytest.raises(ParameterError):
            fit_eta0(pts, "pulsed_sps", self.FIXED, mode="linear_intercept")

    def test_pl_fit(self):
        model = PulsedLaserModel(mean_photons=0.09, dead_time_s=20e-9)
        rates = [20e6, 30e6, 40e6, 60e6, 80e6]
        pts = synthetic_points(model, 0.665, rates, 0.008, seed=5)
        fit = fit_eta0(pts, "pulsed_laser", {"mean_photons": 0.09, "dead_time_s": 20e-9})
        assert abs(fit.eta0 - 0.665) < 3 * fit.uncertainty

    def test_too_few_points(self):
        with pytest.raises(ParameterError):
            fit_eta0([(20e6, 0.66, 0.01)], "pulsed_sps", self.FIXED)

    def test_nonpositive_uncertainty_rejected(self):
        with pytest.raises(ParameterError):
            fit_eta0([(20e6, 0.66, 0.0), (30e6, 0.66, 0.01)], "pulsed_sps", self.FIXED)

    def test_degenerate_cw_data_singular(self):
        # identical rates: intercept and slope are not identifiable
        pts = [(1e5, 0.65, 0.01), (1e5, 0.66, 0.01), (1e5, 0.64, 0.01)]
        with pytest.raises((SingularFitError, np.linalg.LinAlgError)):
            fit_eta0(pts, "cw_sps", {"dead_time_s": 2e-8}, mode="linear_intercept")


class TestWeightedAverage:
    def test_paper_combination(self):
        # inverse-variance oracle: 0.65298 +/- 0.00249
        mean, u = weighted_average([(0.659, 0.003), (0.647, 0.005), (0.61, 0.01)])
        assert mean == pytest.approx(0.6529793103448275, rel=1e-12)
        assert u == pytest.approx(0.002491364395612199, rel=1e-12)
        assert round(mean, 3) == 0.653  # consistent with the published 0.65

    def test_single_estimate(self):
        assert weighted_average([(0.5, 0.01)]) == (0.5, 0.01)

    def test_two_equal_values(self):
        mean, u = weighted_average([(0.6, 0.01), (0.6, 0.01)])
        assert mean == pytest.approx(0.6, rel=1e-15)
        assert u == pytest.approx(0.01 / math.sqrt(2), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            weighted_average([])
        with pytest.raises(ParameterError):
            weighted_average([(0.5, 0.0)])
