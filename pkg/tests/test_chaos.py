from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from gaussvol.chaos import (
    ChaosConstants,
    chaos_constants,
    clamp_tau,
    gamma_density_asymptotic,
    log_noncentral_chi2_density,
    log_noncentral_chi2_density_asymptotic,
    mixing_crossover,
    mixing_density_asymptotic,
    noncentral_chi2_density,
    noncentral_chi2_density_asymptotic,
    sample_integrated_variance,
    tail_log_slope,
)
from gaussvol.exceptions import DomainError, ValidationError
from gaussvol.model import BrownianMotionKernel, ConstantMean
from gaussvol.spectrum import nystrom_spectrum, ou_spectrum

Q, SIGMA, T = 7.0, 1.2, 1 / 12
SIGMA0 = SIGMA / math.sqrt(2 * Q)


@pytest.fixture(scope="module")
def constants(ss_spectrum):
    return chaos_constants(ss_spectrum)


class TestDensities:
    @given(x=st.floats(0.01, 300), n=st.integers(1, 6), lam=st.floats(0.01, 50))
    def test_noncentral_matches_scipy(self, x, n, lam):
        assert float(noncentral_chi2_density(x, n, lam)) == pytest.approx(stats.ncx2.pdf(x, n, lam), rel=1e-8)

    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_central_branch_matches_chi2(self, n):
        x = np.linspace(0.1, 30, 20)
        np.testing.assert_allclose(noncentral_chi2_density(x, n, 0.0), stats.chi2.pdf(x, n), rtol=1e-12)

    def test_far_tail_stays_finite_in_log_space(self):
        assert np.isfinite(log_noncentral_chi2_density(1e5, 3, 2.0))

    @pytest.mark.parametrize("n,lam", [(1, 2.0), (2, 0.5), (3, 5.0)])
    def test_asymptotic_ratio_tends_to_one_monotonically(self, n, lam):
        x = np.array([100.0, 400.0, 1600.0])
        dev = np.abs(np.expm1(log_noncentral_chi2_density(x, n, lam) - log_noncentral_chi2_density_asymptotic(x, n, lam)))
        # odd n gives half-integer Bessel orders, where the form is exact up to rounding
        assert np.all(np.diff(dev) <= 1e-12)
        assert dev[-1] < 0.01

    def test_asymptotic_needs_noncentrality(self):
        with pytest.raises(DomainError):
            noncentral_chi2_density_asymptotic(10.0, 1, 0.0)

    def test_rejects_non_positive_argument(self):
        with pytest.raises(DomainError):
            noncentral_chi2_density(0.0, 1, 1.0)


class TestConstants:
    def test_frozen_stein_stein_values(self, constants):
        c = constants
        assert c.n1 == 1
        assert c.branch == "noncentral"
        assert c.lambda1 == pytest.approx(0.00713337, rel=1e-6)
        assert c.delta == pytest.approx(0.46652, rel=1e-4)
        assert c.A == pytest.approx(1.11074, rel=1e-4)
        assert c.C == pytest.approx(2.0775, rel=1e-4)
        assert c.B_tilde == pytest.approx(2.3345, rel=1e-4)
        assert c.C_tilde == pytest.approx(5.8411, rel=1e-4)

    def test_tilde_constants_definition(self, constants):
        c = constants
        assert c.B_tilde == pytest.approx(math.sqrt(c.delta * c.T / c.lambda1), rel=1e-14)
        assert c.C_tilde == pytest.approx(c.T / (2 * c.lambda1), rel=1e-14)

    def test_truncation_is_corrected_by_tail_term(self, ss_spectrum, constants):
        short = chaos_constants(ss_spectrum.with_modes(30))
        assert short.A == pytest.approx(constants.A, rel=1e-5)

    def test_product_formula_on_two_modes(self):
        # direct evaluation of the defining product for a hand-made two-mode law
        spec = ou_spectrum(Q, SIGMA, SIGMA0, 0.2, 0.2, T, count=2)
        l1, l2 = spec.eigenvalues
        d2 = spec.delta_coeffs[1]
        expected = math.sqrt(l1 / (l1 - l2)) * math.exp(d2**2 / (2 * (l1 - l2)))
        expected *= math.exp(spec.tail_trace / (2 * l1))
        assert chaos_constants(spec).A == pytest.approx(expected, rel=1e-13)

    def test_centered_model_uses_central_branch(self):
        spec = ou_spectrum(Q, SIGMA, SIGMA0, 0.0, 0.0, T)
        c = chaos_constants(spec)
        assert c.centered and c.delta == 0.0 and c.branch == "central"

    def test_branch_limit_differs_by_factor_two(self):
        # the noncentral asymptotic keeps one half of the cosh; at delta -> 0 both halves merge
        tiny = chaos_constants(ou_spectrum(Q, SIGMA, SIGMA0, 1e-7, 1e-7, T))
        zero = chaos_constants(ou_spectrum(Q, SIGMA, SIGMA0, 0.0, 0.0, T))
        assert zero.C / tiny.C == pytest.approx(2.0, rel=1e-6)

    def test_round_trip(self, constants):
        assert ChaosConstants.from_dict(constants.to_dict()) == constants

    def test_from_dict_reports_missing_field(self):
        with pytest.raises(ValidationError):
            ChaosConstants.from_dict({"lambda1": 1.0})

    def test_clamp_tau(self):
        assert clamp_tau(-1e-14, 1.0) == 0.0
        assert clamp_tau(0.3, 1.0) == 0.3
        with pytest.raises(ValidationError):
            clamp_tau(-1e-3, 1.0)

    def test_brownian_motion_constants(self):
        spec = nystrom_spectrum(BrownianMotionKernel(), ConstantMean(0.0), 1.0, (128, 256), count=50)
        c = chaos_constants(spec)
        assert c.lambda1 == pytest.approx(4 / math.pi**2, rel=1e-8)
        assert c.branch == "central"


class TestMixingDensity:
    def test_change_of_variables(self, constants):
        y = np.array([2.0, 3.0, 5.0])
        t = constants.T
        p, _ = gamma_density_asymptotic(t * y**2, constants)
        np.testing.assert_allclose(mixing_density_asymptotic(y, constants), 2 * t * y * p, rtol=1e-12)

    def test_change_of_variables_central(self):
        c = chaos_constants(ou_spectrum(Q, SIGMA, SIGMA0, 0.0, 0.0, T))
        y = np.array([1.5, 4.0])
        p, branch = gamma_density_asymptotic(c.T * y**2, c)
        assert branch == "central"
        np.testing.assert_allclose(mixing_density_asymptotic(y, c), 2 * c.T * y * p, rtol=1e-12)

    def test_crossover(self, constants):
        assert mixing_crossover(constants) == pytest.approx(3 * math.sqrt(constants.mean_gamma / constants.T))


class TestSampling:
    def test_moments(self, ss_spectrum):
        k = 40
        x = sample_integrated_variance(ss_spectrum, 200_000, seed=7, modes=k)
        lam = ss_spectrum.eigenvalues
        d = ss_spectrum.delta_coeffs
        # dropped modes enter through their mean only
        mean = float(np.sum(lam) + ss_spectrum.s)
        var = float(np.sum(2 * lam[:k] ** 2 + 4 * lam[:k] * d[:k] ** 2))
        se = math.sqrt(var / x.size)
        assert abs(x.mean() - mean) < 4 * se
        assert x.var() == pytest.approx(var, rel=0.02)

    def test_thread_invariance(self, ss_spectrum):
        a = sample_integrated_variance(ss_spectrum, 5000, seed=3, modes=20, batch_size=1000, threads=1)
        b = sample_integrated_variance(ss_spectrum, 5000, seed=3, modes=20, batch_size=1000, threads=3)
        np.testing.assert_array_equal(a, b)

    def test_batch_offset_continues_the_stream(self, ss_spectrum):
        whole = sample_integrated_variance(ss_spectrum, 2000, seed=5, modes=10, batch_size=1000)
        tail = sample_integrated_variance(ss_spectrum, 1000, seed=5, modes=10, batch_size=1000, batch_offset=1)
        np.testing.assert_array_equal(whole[1000:], tail)

    def test_rejects_empty_request(self, ss_spectrum):
        with pytest.raises(ValidationError):
            sample_integrated_variance(ss_spectrum, 0, seed=1)

    def test_tail_slope(self, ss_spectrum, constants):
        x = sample_integrated_variance(ss_spectrum, 1_000_000, seed=11, modes=60)
        slope = tail_log_slope(x, constants)
        assert slope == pytest.approx(-1 / (2 * constants.lambda1), rel=0.05)
