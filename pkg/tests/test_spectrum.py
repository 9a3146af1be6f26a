from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from gaussvol.exceptions import NumericalError, ValidationError
from gaussvol.model import (
    BrownianBridgeKernel,
    BrownianMotionKernel,
    ConstantMean,
    OuStationaryKernel,
    stein_stein,
)
from gaussvol.spectrum import (
    Spectrum,
    delta1_stein_stein,
    group_multiplicities,
    model_spectrum,
    nystrom_spectrum,
    ou_frequencies,
    ou_spectrum,
    richardson,
    trapezoid_weights,
    truncation_count,
)

SS = dict(q=7.0, sigma=1.2, m=0.2, T=1 / 12)


@pytest.fixture(scope="module")
def bm_spectrum():
    return nystrom_spectrum(BrownianMotionKernel(), ConstantMean(1.0), 1.0, (256, 512), count=5)


class TestHelpers:
    def test_trapezoid_weights_integrate_linear_exactly(self):
        w = trapezoid_weights(10, 2.0)
        t = np.linspace(0, 2, 11)
        assert w.sum() == pytest.approx(2.0)
        assert w @ (3 * t + 1) == pytest.approx(8.0)

    def test_richardson_uneven_grids(self):
        sizes = (10, 25, 60)
        levels = [np.array([2.0 - 1.0 / n**2 + 5.0 / n**4]) for n in sizes]
        assert richardson(levels, sizes)[0] == pytest.approx(2.0, abs=1e-13)

    def test_richardson_removes_even_error_terms(self):
        sizes = (16, 32, 64)
        exact = 1.5
        levels = [np.array([exact + 0.3 / n**2 - 2.0 / n**4]) for n in sizes]
        assert richardson(levels, sizes)[0] == pytest.approx(exact, abs=1e-14)

    def test_group_multiplicities(self):
        sizes, reps = group_multiplicities([2.0, 2.0 - 1e-12, 1.0, 0.5, 0.5], 1e-8)
        assert sizes == (2, 1, 2)
        np.testing.assert_allclose(reps, [2.0, 1.0, 0.5])

    def test_group_multiplicities_requires_sorted(self):
        with pytest.raises(ValidationError):
            group_multiplicities([1.0, 2.0], 1e-8)

    def test_truncation_by_trace(self):
        lam = 0.5 ** np.arange(60)
        assert truncation_count(lam, float(lam.sum())) == 14

    def test_truncation_by_ratio(self):
        lam = 10.0 ** -np.arange(20.0)
        assert truncation_count(lam, 1e9) == 9


class TestBrownianOracles:
    def test_motion_eigenvalues(self, bm_spectrum):
        n = np.arange(1, 6)
        expected = 1 / ((n - 0.5) ** 2 * math.pi**2)
        np.testing.assert_allclose(bm_spectrum.eigenvalues[:5], expected, rtol=1e-8)

    def test_motion_eigenfunction(self, bm_spectrum):
        t = np.linspace(0.05, 0.95, 7)
        np.testing.assert_allclose(bm_spectrum.eigenfunction(1, t), math.sqrt(2) * np.sin(math.pi * t / 2), atol=1e-4)

    def test_motion_top_eigenvalue_scales_with_horizon(self):
        T = 3.0
        spec = nystrom_spectrum(BrownianMotionKernel(), ConstantMean(0.0), T, (256, 512), count=2)
        assert spec.lambda1 == pytest.approx(4 * T**2 / math.pi**2, rel=1e-8)

    def test_bridge_eigenvalues(self):
        spec = nystrom_spectrum(BrownianBridgeKernel(1.0), ConstantMean(0.0), 1.0, (256, 512), count=4)
        n = np.arange(1, 5)
        np.testing.assert_allclose(spec.eigenvalues[:4], 1 / (n * math.pi) ** 2, rtol=1e-8)

    def test_centered_mean_gives_zero_delta(self):
        spec = nystrom_spectrum(BrownianMotionKernel(), ConstantMean(0.0), 1.0, (128, 256), count=3)
        assert np.all(spec.delta_coeffs == 0.0)
        assert spec.s == 0.0


class TestOuFrequencies:
    @given(q=st.floats(0.2, 30), sigma=st.floats(0.1, 3), T=st.floats(0.02, 2))
    def test_roots_lie_in_brackets(self, q, sigma, T):
        roots = ou_frequencies(q, sigma, sigma / math.sqrt(2 * q), T, 6)
        n = np.arange(1, 7)
        assert np.all(roots.w > (n - 1) * math.pi / T)
        assert np.all(roots.w < n * math.pi / T)

    def test_residual_is_tiny(self):
        roots = ou_frequencies(7.0, 1.2, 1.2 / math.sqrt(14), 1 / 12, 20)
        scale = 1.2**2 * roots.w
        assert np.all(np.abs(roots.residual()) <= 1e-10 * scale)

    def test_refuses_large_initial_variance(self):
        with pytest.raises(NumericalError):
            ou_frequencies(7.0, 1.0, 0.5, 1.0, 3)

    def test_fallback_to_nystrom(self):
        spec = stein_stein(0.1, 7.0, 1.0, 1.0, start="random", sigma0=0.5)
        assert model_spectrum(spec, count=5).metadata["method"] == "nystrom"


class TestOuSpectrum:
    @pytest.fixture(scope="class")
    @classmethod
    def analytic(cls):
        return ou_spectrum(SS["q"], SS["sigma"], SS["sigma"] / math.sqrt(2 * SS["q"]), SS["m"], SS["m"], SS["T"])

    def test_frozen_top_eigenvalue(self, analytic):
        assert analytic.lambda1 == pytest.approx(0.00713337, abs=5e-9)

    def test_agrees_with_nystrom(self, analytic):
        num = nystrom_spectrum(OuStationaryKernel(SS["q"], SS["sigma"]), ConstantMean(SS["m"]), SS["T"], count=5)
        np.testing.assert_allclose(num.eigenvalues[:3], analytic.eigenvalues[:3], rtol=1e-4)
        # delta_2 vanishes by symmetry, hence the absolute floor
        np.testing.assert_allclose(num.delta_coeffs[:3], analytic.delta_coeffs[:3], rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_eigen_equation(self, analytic, n):
        k = OuStationaryKernel(SS["q"], SS["sigma"])
        T = SS["T"]
        lam = analytic.eigenvalues[n - 1]
        for t in (0.0, 0.3 * T, T):
            lhs = integrate.quad(lambda s: float(k(t, s)) * float(analytic.eigenfunction(n, s)), 0, T, points=[t], epsabs=1e-14)[0]
            assert lhs == pytest.approx(lam * float(analytic.eigenfunction(n, t)), abs=1e-10 * analytic.lambda1)

    def test_orthonormal(self, analytic):
        T = SS["T"]
        gram = np.array([
            [integrate.quad(lambda s: float(analytic.eigenfunction(i, s) * analytic.eigenfunction(j, s)), 0, T, limit=200)[0] for j in range(1, 5)]
            for i in range(1, 5)
        ])
        np.testing.assert_allclose(gram, np.eye(4), atol=1e-10)

    def test_delta_matches_quadrature(self, analytic):
        T, m = SS["T"], SS["m"]
        for n in (1, 2, 3):
            direct = integrate.quad(lambda s: m * float(analytic.eigenfunction(n, s)), 0, T, limit=200)[0]
            assert analytic.delta_coeffs[n - 1] == pytest.approx(direct, abs=1e-10)

    def test_delta1_closed_form_with_relaxing_mean(self):
        q, sigma, m, m0, T = 4.0, 0.8, 0.1, 0.3, 0.25
        spec = ou_spectrum(q, sigma, 0.0, m, m0, T, count=3)
        mean = lambda t: math.exp(-q * t) * m0 + (1 - math.exp(-q * t)) * m
        direct = integrate.quad(lambda s: mean(s) * float(spec.eigenfunction(1, s)), 0, T)[0]
        assert delta1_stein_stein(q, sigma, 0.0, m, m0, T) == pytest.approx(direct, rel=1e-9)

    def test_trace_and_bessel(self, analytic):
        assert analytic.trace == pytest.approx(SS["sigma"] ** 2 / (2 * SS["q"]) * SS["T"], rel=1e-12)
        assert np.sum(analytic.eigenvalues) <= analytic.trace * (1 + 1e-12)
        assert analytic.tau >= -1e-12
        assert np.sum(analytic.delta_coeffs**2) <= analytic.s * (1 + 1e-12)

    @given(q=st.floats(0.5, 20), sigma=st.floats(0.2, 2), T=st.floats(0.05, 1))
    def test_eigenvalues_positive_decreasing(self, q, sigma, T):
        spec = ou_spectrum(q, sigma, 0.0, 0.1, 0.1, T, count=8)
        assert np.all(spec.eigenvalues > 0)
        assert np.all(np.diff(spec.eigenvalues) < 0)
        assert spec.n1 == 1

    def test_with_modes(self, analytic):
        cut = analytic.with_modes(3)
        assert cut.truncation_count == 3
        assert cut.tau == pytest.approx(cut.s - np.sum(analytic.delta_coeffs[:3] ** 2))


class TestSerialisation:
    def test_round_trip(self, ss_spectrum, tmp_path):
        path = tmp_path / "spec.json"
        ss_spectrum.save(path)
        again = Spectrum.load(path)
        for name in ("eigenvalues", "grid", "eigenfunctions", "delta_coeffs", "distinct_values"):
            np.testing.assert_array_equal(getattr(again, name), getattr(ss_spectrum, name))
        assert again.multiplicities == ss_spectrum.multiplicities
        assert (again.s, again.tau, again.trace, again.T) == (ss_spectrum.s, ss_spectrum.tau, ss_spectrum.trace, ss_spectrum.T)

    def test_eigenfunction_index_checked(self, ss_spectrum):
        with pytest.raises(ValidationError):
            ss_spectrum.eigenfunction(0, 0.0)
