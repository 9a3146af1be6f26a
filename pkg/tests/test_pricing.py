from __future__ import annotations

import math

import numpy as np
import pytest

from gaussvol._rng import batch_generator
from gaussvol.exceptions import DomainError, ValidationError
from gaussvol.model import BrownianMotionKernel, ConstantMean, ModelSpec
from gaussvol.pricing import (
    SimConfig,
    _PathSampler,
    explosion_threshold,
    gaussian_moment,
    moment_explosion_probe,
    price,
    price_calls_mixture,
    simulate_euler,
)

STRIKES = np.exp([-0.5, 0.0, 0.5])


class TestConfig:
    @pytest.mark.parametrize(
        "bad", [dict(n_paths=0), dict(n_steps=1), dict(scheme="heston"), dict(batch_size=1)]
    )
    def test_validation(self, bad):
        with pytest.raises(ValidationError):
            SimConfig(**bad)

    def test_rejects_bad_strikes(self, ss_spec):
        with pytest.raises(DomainError):
            simulate_euler(ss_spec, [-1.0], SimConfig(n_paths=10, n_steps=2))


class TestPathSamplers:
    def test_stationary_ou_variance(self, ss_spec):
        sampler = _PathSampler(ss_spec, 200)
        X = sampler.sample(batch_generator(0, 0), 40_000)
        var = 1.2**2 / 14
        for j in (0, 199):
            assert X[:, j].var() == pytest.approx(var, rel=0.03)
            assert X[:, j].mean() == pytest.approx(0.2, abs=4 * math.sqrt(var / 40_000))

    def test_fou_start_is_stationary(self, fou_spec):
        sampler = _PathSampler(fou_spec, 200)
        X = sampler.sample(batch_generator(1, 0), 20_000)
        k = fou_spec.kernel
        lags = (0, 50, 199)
        Xc = X - 0.2
        for j in lags:
            cov = np.mean(Xc[:, 0] * Xc[:, j])
            target = float(k.autocovariance(j * sampler.dt))
            assert cov == pytest.approx(target, rel=0.05)

    def test_generic_kernel_sampler(self):
        spec = ModelSpec(ConstantMean(0.1), BrownianMotionKernel(), 1.0).validate()
        sampler = _PathSampler(spec, 50)
        X = sampler.sample(batch_generator(2, 0), 30_000)
        t = np.arange(50) / 50
        np.testing.assert_allclose(X.var(axis=0)[1:], t[1:], rtol=0.05)
        np.testing.assert_allclose(X.mean(axis=0), 0.1, atol=0.03)


class TestEuler:
    def test_martingale(self, ss_spec):
        run = simulate_euler(ss_spec, STRIKES, SimConfig(n_paths=50_000, n_steps=100, seed=3))
        assert abs(run.discounted_mean - ss_spec.s0) < 4 * run.discounted_std_err

    def test_thread_invariance(self, ss_spec):
        cfg = SimConfig(n_paths=4000, n_steps=50, seed=9, batch_size=1000)
        a = simulate_euler(ss_spec, STRIKES, cfg)
        b = simulate_euler(ss_spec, STRIKES, SimConfig(**{**cfg.__dict__, "threads": 3}))
        assert a == b

    def test_conditional_matches_plain(self, ss_spec):
        plain = simulate_euler(ss_spec, STRIKES, SimConfig(n_paths=60_000, n_steps=100, seed=4)).points
        cond = simulate_euler(ss_spec, STRIKES, SimConfig(n_paths=60_000, n_steps=100, seed=5, conditional=True)).points
        for a, b in zip(plain, cond):
            assert abs(a.price - b.price) < 4 * math.hypot(a.std_err, b.std_err)

    def test_antithetic_reduces_error(self, ss_spec):
        cfg = dict(n_paths=20_000, n_steps=50, seed=6)
        plain = simulate_euler(ss_spec, [1.0], SimConfig(**cfg))
        anti = simulate_euler(ss_spec, [1.0], SimConfig(**cfg, antithetic=True))
        assert anti.points[0].std_err < plain.points[0].std_err

    def test_rates_and_spot_scale_out(self):
        from gaussvol.model import stein_stein

        r, T, s0 = 0.05, 0.25, 100.0
        cfg = SimConfig(n_paths=5000, n_steps=50, seed=1, conditional=True)
        base = simulate_euler(stein_stein(0.2, 7.0, 1.2, T), [1.0], cfg).points[0]
        moved = simulate_euler(stein_stein(0.2, 7.0, 1.2, T, r=r, s0=s0), [s0 * math.exp(r * T)], cfg).points[0]
        assert moved.k == pytest.approx(0.0, abs=1e-15)
        assert moved.price == pytest.approx(s0 * base.price, rel=1e-12)
        assert moved.iv == pytest.approx(base.iv, rel=1e-10)


class TestMixture:
    def test_quadrature_matches_sampling_for_one_mode(self, ss_spectrum, ss_spec):
        one = ss_spectrum.with_modes(1)
        quad = price_calls_mixture(one, ss_spec, STRIKES, method="quadrature")
        mc = price_calls_mixture(one, ss_spec, STRIKES, SimConfig(n_paths=400_000, seed=2, scheme="kl_mixture"), method="monte_carlo")
        for a, b in zip(quad, mc):
            assert a.std_err == 0.0
            assert abs(a.price - b.price) < 4 * b.std_err

    def test_quadrature_needs_single_mode(self, ss_spectrum, ss_spec):
        with pytest.raises(ValidationError):
            price_calls_mixture(ss_spectrum, ss_spec, STRIKES, method="quadrature")

    def test_symmetric_smile(self, ss_spectrum, ss_spec):
        k = np.array([-0.5, 0.5])
        pts = price_calls_mixture(ss_spectrum, ss_spec, np.exp(k), SimConfig(n_paths=20_000, seed=1, scheme="kl_mixture"))
        assert pts[0].iv == pytest.approx(pts[1].iv, abs=1e-12)

    def test_agrees_with_euler(self, ss_spec):
        cfg = SimConfig(n_paths=100_000, n_steps=200, seed=8, conditional=True)
        euler = price(ss_spec, STRIKES, cfg)
        mix = price(ss_spec, STRIKES, SimConfig(n_paths=400_000, seed=8, scheme="kl_mixture"))
        for a, b in zip(euler, mix):
            assert abs(a.price - b.price) < 4 * math.hypot(a.std_err, b.std_err)


class TestExplosion:
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_boundary(self, sigma):
        crit = explosion_threshold(sigma)
        grid = np.round(np.arange(1.0, crit + 0.5, 0.01), 2)
        probes = moment_explosion_probe(sigma, grid)
        finite = np.array([p.finite for p in probes])
        flip = int(np.argmin(finite))
        assert np.all(finite[:flip]) and not np.any(finite[flip:])
        assert grid[flip - 1] <= crit <= grid[flip] + 1e-12

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_estimate_matches_closed_form(self, p):
        probe = moment_explosion_probe(1.0, [p])[0]
        assert probe.estimate == pytest.approx(gaussian_moment(p, 1.0), rel=1e-8)

    def test_first_moment_is_one(self):
        assert gaussian_moment(1.0, 3.0) == 1.0

    def test_rejects_bad_sigma(self):
        with pytest.raises(DomainError):
            moment_explosion_probe(0.0, [1.0])
