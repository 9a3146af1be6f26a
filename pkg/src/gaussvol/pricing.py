"""Option pricing under Gaussian stochastic volatility.

Two independent schemes are provided:

* ``euler_path``: simulate the volatility path ``X`` on a uniform grid, then
  ``log S_T = log s0 + rT - 1/2 sum X_i^2 dt + sum |X_i| dW_i`` with an
  independent Brownian ``W``.
* ``kl_mixture``: draw ``Gamma_T`` from its Karhunen-Loeve representation and
  average Black-Scholes prices with volatility ``sqrt(Gamma_T / T)``.

Both price the out-of-the-money side (puts below the forward) and report call
prices through put-call parity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, linalg, special

from ._rng import batch_generator, batch_sizes, map_batches
from .blackscholes import (
    bs_call,
    bs_implied_vol,
    bs_put,
    implied_vol_from_otm,
    normalised_otm,
)
from .chaos import clamp_tau, noncentral_chi2_density, sample_integrated_variance
from .exceptions import DomainError, UndefinedIVError, ValidationError
from .fbm import CirculantFgn, fgn_autocovariance, simulate_fbm_increments
from .model import FouStationaryKernel, ModelSpec, OuParameters, ou_parameters
from .spectrum import Spectrum, model_spectrum

FloatArray = NDArray[np.float64]

__all__ = [
    "SimConfig",
    "PricedPoint",
    "EulerRun",
    "bs_call",
    "bs_put",
    "bs_implied_vol",
    "simulate_fbm_increments",
    "price_calls_euler",
    "simulate_euler",
    "price_calls_mixture",
    "price_model_mixture",
    "price",
    "moment_explosion_probe",
    "explosion_threshold",
]

SCHEMES = ("euler_path", "kl_mixture")


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``conditional`` integrates ``W`` out analytically given each volatility
    path (the price becomes a Black-Scholes average over the simulated
    ``sum X_i^2 dt``).  ``antithetic`` pairs ``W`` with ``-W``.  Both default
    off so that the plain Euler protocol is the default.
    """

    n_paths: int = 1_000_000
    n_steps: int = 1000
    seed: int = 0
    scheme: str = "euler_path"
    antithetic: bool = False
    conditional: bool = False
    batch_size: int = 20_000
    threads: int | None = None
    modes: int = 200

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValidationError("n_paths must be >= 1")
        if self.n_steps < 2:
            raise ValidationError("n_steps must be >= 2")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")


@dataclass(frozen=True)
class PricedPoint:
    """A priced strike; ``iv`` is ``None`` when the price admits no implied volatility."""

    k: float
    strike: float
    price: float
    std_err: float
    iv: float | None


@dataclass(frozen=True)
class EulerRun:
    points: list[PricedPoint]
    discounted_mean: float
    discounted_std_err: float
    n_paths: int


# ---------------------------------------------------------------------------
# Accumulation
# ---------------------------------------------------------------------------


def _batch_moments(values: FloatArray) -> tuple[int, FloatArray, FloatArray]:
    """Count, mean and centred sum of squares along axis 0."""
    n = values.shape[0]
    mean = values.mean(axis=0)
    m2 = np.sum((values - mean) ** 2, axis=0)
    return n, mean, m2


def _combine(parts: list[tuple[int, FloatArray, FloatArray]]) -> tuple[int, FloatArray, FloatArray]:
    """Merge batch moments in batch order (Chan et al. pairwise update)."""
    n, mean, m2 = parts[0]
    mean, m2 = mean.copy(), m2.copy()
    for nb, mb, m2b in parts[1:]:
        tot = n + nb
        d = mb - mean
        mean = mean + d * (nb / tot)
        m2 = m2 + m2b + d * d * (n * nb / tot)
        n = tot
    return n, mean, m2


def _std_err(n: int, m2: FloatArray) -> FloatArray:
    if n < 2:
        return np.full_like(m2, np.nan)
    return np.sqrt(m2 / (n - 1) / n)


def _log_moneyness(spec: ModelSpec, strikes: ArrayLike) -> tuple[FloatArray, FloatArray]:
    K = np.atleast_1d(np.asarray(strikes, dtype=float))
    if np.any(K <= 0) or not np.all(np.isfinite(K)):
        raise DomainError("strikes must be positive and finite")
    return K, np.log(K / spec.forward)


def _points(spec: ModelSpec, K: FloatArray, k: FloatArray, otm: FloatArray, se: FloatArray) -> list[PricedPoint]:
    """Convert forward-normalised OTM prices into call prices and implied vols."""
    disc_F = math.exp(-spec.r * spec.T) * spec.forward
    out = []
    for Ki, ki, pi, si in zip(K, k, otm, se):
        intrinsic = max(1.0 - math.exp(ki), 0.0)
        try:
            iv: float | None = implied_vol_from_otm(pi * disc_F, ki, spec.s0, spec.T, spec.r)
        except UndefinedIVError:
            iv = None
        out.append(PricedPoint(float(ki), float(Ki), float(disc_F * (pi + intrinsic)), float(disc_F * si), iv))
    return out


def _otm_payoff(ratio: FloatArray, k: FloatArray) -> FloatArray:
    """Forward-normalised OTM payoff for ``S_T / F = ratio`` (rows) and strikes ``k`` (columns)."""
    ek = np.exp(k)
    ratio = ratio[:, None]
    return np.where(k >= 0, np.maximum(ratio - ek, 0.0), np.maximum(ek - ratio, 0.0))


# ---------------------------------------------------------------------------
# Volatility path samplers
# ---------------------------------------------------------------------------


class _PathSampler:
    """Draws ``(n, n_steps)`` left-point volatility samples ``X_{t_0}, ..., X_{t_{n-1}}``."""

    def __init__(self, spec: ModelSpec, n_steps: int) -> None:
        self.spec = spec
        self.n_steps = n_steps
        self.dt = spec.T / n_steps
        self.ou: OuParameters | None = ou_parameters(spec)
        self.fou = spec.kernel if isinstance(spec.kernel, FouStationaryKernel) else None
        if self.fou is not None:
            self._setup_fou(self.fou)
        elif self.ou is None:
            self._setup_gaussian()

    # OU: Euler from the stationary law, a random start, or a fixed start
    def _ou(self, rng: np.random.Generator, n: int) -> FloatArray:
        p = self.ou
        assert p is not None
        sd0 = p.sigma / math.sqrt(2 * p.q) if p.stationary else p.sigma0
        x = p.m0 + sd0 * rng.standard_normal(n)
        out = np.empty((n, self.n_steps))
        drift = p.q * self.dt
        vol = p.sigma * math.sqrt(self.dt)
        for i in range(self.n_steps):
            out[:, i] = x
            x = x + drift * (p.m - x) + vol * rng.standard_normal(n)
        return out

    # fOU: exact stationary start jointly with the fGn increments
    def _setup_fou(self, kern: FouStationaryKernel) -> None:
        self.fgn = CirculantFgn(kern.H, self.n_steps, self.spec.T)
        if kern.H == 0.5:
            self.fou_weights = np.zeros(self.n_steps)
            self.fou_resid = math.sqrt(kern.variance)
            return
        a = 2 * kern.H
        q = kern.q
        t = np.arange(self.n_steps + 1) * self.dt
        # E (V + t)^{2H} for V ~ Exp(q)
        shifted = np.exp(q * t) * q ** (-a) * special.gammaincc(a + 1, q * t) * special.gamma(a + 1)
        cov_b = 0.5 * (shifted - t**a - shifted[0])
        c = kern.sigma * np.diff(cov_b)
        gamma = fgn_autocovariance(kern.H, self.n_steps - 1, self.dt)
        weights = linalg.solve_toeplitz(gamma, c)
        resid = kern.variance - float(c @ weights)
        if resid < -1e-12 * kern.variance:
            raise ValidationError("inconsistent fOU start covariance")
        self.fou_weights = weights
        self.fou_resid = math.sqrt(max(resid, 0.0))

    def _fou_paths(self, rng: np.random.Generator, n: int) -> FloatArray:
        kern = self.fou
        assert kern is not None
        m = float(self.spec.mean(0.0))
        xi = self.fgn.sample(rng, n)
        x = m + xi @ self.fou_weights + self.fou_resid * rng.standard_normal(n)
        out = np.empty((n, self.n_steps))
        drift = kern.q * self.dt
        for i in range(self.n_steps):
            out[:, i] = x
            x = x + drift * (m - x) + kern.sigma * xi[:, i]
        return out

    # any other kernel: exact Gaussian vector on the grid
    def _setup_gaussian(self) -> None:
        t = np.arange(self.n_steps) * self.dt
        Q = self.spec.kernel(t[:, None], t[None, :])
        w, v = linalg.eigh(Q)
        if np.min(w) < -1e-10 * max(float(np.max(w)), 1e-300):
            raise ValidationError("kernel is not positive semidefinite on the simulation grid")
        self.factor = v * np.sqrt(np.clip(w, 0.0, None))
        self.mean_path = self.spec.mean(t)

    def _gaussian(self, rng: np.random.Generator, n: int) -> FloatArray:
        return self.mean_path + rng.standard_normal((n, self.n_steps)) @ self.factor.T

    def sample(self, rng: np.random.Generator, n: int) -> FloatArray:
        if self.fou is not None:
            return self._fou_paths(rng, n)
        if self.ou is not None:
            return self._ou(rng, n)
        return self._gaussian(rng, n)


# ---------------------------------------------------------------------------
# Euler pricer
# ---------------------------------------------------------------------------


def simulate_euler(spec: ModelSpec, strikes: ArrayLike, config: SimConfig = SimConfig()) -> EulerRun:
    """Euler path pricing plus the discounted-mean martingale check."""
    K, k = _log_moneyness(spec, strikes)
    sampler = _PathSampler(spec, config.n_steps)
    dt = spec.T / config.n_steps
    sizes = batch_sizes(config.n_paths, config.batch_size)

    def run(b: int):
        rng = batch_generator(config.seed, b)
        X = sampler.sample(rng, sizes[b])
        gamma = np.einsum("ij,ij->i", X, X) * dt
        if config.conditional:
            payoff = normalised_otm(k[None, :], np.sqrt(gamma)[:, None])
            ratio = np.ones(sizes[b])
        else:
            w_rng = batch_generator(config.seed, b, stream=2)
            iw = np.einsum("ij,ij->i", np.abs(X), w_rng.standard_normal(X.shape)) * math.sqrt(dt)
            ratio = np.exp(-0.5 * gamma + iw)
            payoff = _otm_payoff(ratio, k)
            if config.antithetic:
                anti = np.exp(-0.5 * gamma - iw)
                payoff = 0.5 * (payoff + _otm_payoff(anti, k))
                ratio = 0.5 * (ratio + anti)
        return _batch_moments(np.column_stack([payoff, ratio]))

    n, mean, m2 = _combine(map_batches(run, len(sizes), config.threads))
    se = _std_err(n, m2)
    points = _points(spec, K, k, mean[:-1], se[:-1])
    # e^{-rT} S_T averaged, in units of s0
    return EulerRun(points, float(spec.s0 * mean[-1]), float(spec.s0 * se[-1]), n)


def price_calls_euler(spec: ModelSpec, strikes: ArrayLike, config: SimConfig = SimConfig()) -> list[PricedPoint]:
    """Call prices from Euler-simulated volatility paths."""
    return simulate_euler(spec, strikes, config).points


# ---------------------------------------------------------------------------
# Mixture pricer
# ---------------------------------------------------------------------------


def _single_mode_otm(spectrum: Spectrum, k: FloatArray, T: float) -> FloatArray:
    """Exact mixture price for one KL mode by integrating against the chi-squared density."""
    lam = spectrum.lambda1
    nc = float(spectrum.delta_coeffs[0] ** 2 / lam)
    tau = clamp_tau(float(spectrum.tau), spectrum.s)
    out = np.empty(k.size)
    for i, ki in enumerate(k):
        def f(x: float, ki: float = ki) -> float:
            return float(normalised_otm(ki, math.sqrt(lam * x + tau)) * noncentral_chi2_density(x, 1, nc))

        # the density has an integrable x^{-1/2} singularity at zero
        val = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)[0]
        val += integrate.quad(f, 1.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]
        out[i] = val
    return out


def price_calls_mixture(
    spectrum: Spectrum,
    spec: ModelSpec,
    strikes: ArrayLike,
    config: SimConfig = SimConfig(scheme="kl_mixture"),
    *,
    method: str = "auto",
) -> list[PricedPoint]:
    """Average Black-Scholes prices over samples of ``Gamma_T``.

    ``method="quadrature"`` (chosen automatically for single-mode spectra)
    integrates against the exact noncentral chi-squared law instead of
    sampling; its standard error is reported as zero.
    """
    K, k = _log_moneyness(spec, strikes)
    if method == "auto":
        method = "quadrature" if spectrum.truncation_count == 1 else "monte_carlo"
    if method == "quadrature":
        if spectrum.truncation_count != 1:
            raise ValidationError("quadrature mixture pricing needs a single-mode spectrum")
        otm = _single_mode_otm(spectrum, k, spec.T)
        return _points(spec, K, k, otm, np.zeros_like(otm))
    if method != "monte_carlo":
        raise ValidationError("method must be 'auto', 'monte_carlo' or 'quadrature'")
    sizes = batch_sizes(config.n_paths, config.batch_size)

    def run(b: int):
        gamma = sample_integrated_variance(
            spectrum, sizes[b], config.seed, modes=config.modes, batch_size=config.batch_size, batch_offset=b
        )
        return _batch_moments(normalised_otm(k[None, :], np.sqrt(gamma)[:, None]))

    n, mean, m2 = _combine(map_batches(run, len(sizes), config.threads))
    return _points(spec, K, k, mean, _std_err(n, m2))


def price_model_mixture(spec: ModelSpec, strikes: ArrayLike, config: SimConfig = SimConfig(scheme="kl_mixture")) -> list[PricedPoint]:
    """Mixture pricing with the model's own spectrum (analytic for OU, Nystrom otherwise)."""
    spectrum = model_spectrum(spec, count=max(config.modes, 1))
    return price_calls_mixture(spectrum, spec, strikes, config)


def price(spec: ModelSpec, strikes: ArrayLike, config: SimConfig) -> list[PricedPoint]:
    """Dispatch on ``config.scheme``."""
    if config.scheme == "kl_mixture":
        return price_model_mixture(spec, strikes, config)
    return price_calls_euler(spec, strikes, config)


# ---------------------------------------------------------------------------
# Moment explosion in the two-factor toy model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExplosionProbe:
    p: float
    finite: bool
    estimate: float


def explosion_threshold(sigma: float) -> float:
    """``1/2 + sqrt(1/4 + 1/sigma^2)``: the moment order beyond which ``E S_1^p`` diverges."""
    return 0.5 + math.sqrt(0.25 + 1.0 / sigma**2)


def _gauss_hermite_moment(p: float, sigma: float, nodes: int) -> float:
    """``E exp(p sigma X W - p sigma^2 X^2 / 2)`` by product Gauss-Hermite rules.

    The exponent is ``-z' A z / 2`` with ``z = (X, W)``; each principal axis of
    ``A`` gets its own rule scaled by ``1/sqrt|mu|``.  A negative eigenvalue
    leaves an integrand ``exp(+v^2)`` against the Gaussian weight, whose
    quadrature sums grow without bound as nodes are added.
    """
    A = np.array([[1 + p * sigma**2, -p * sigma], [-p * sigma, 1.0]])
    mu = np.linalg.eigvalsh(A)
    x, w = special.roots_hermitenorm(nodes)
    w = w / math.sqrt(2 * math.pi)
    total = 1.0
    for m in mu:
        if m == 0:
            return math.inf
        # int phi(u) e^{-(m-1)u^2/2} du with u = v / sqrt|m|
        g = np.exp(-0.5 * (np.sign(m) - 1.0) * x**2) if m > 0 else np.exp(x**2)
        total *= float(np.sum(w * g)) / math.sqrt(abs(m))
    return total


def moment_explosion_probe(
    sigma: float,
    p_grid: ArrayLike,
    *,
    nodes: int = 64,
    rel_tol: float = 1e-8,
) -> list[ExplosionProbe]:
    """Classify ``E S_1^p`` as finite or divergent for ``S_1 = exp(sigma X W - sigma^2 X^2 / 2)``.

    A moment is declared finite when the quadrature estimate is stable under
    doubling the node count.
    """
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    out = []
    for p in np.atleast_1d(np.asarray(p_grid, dtype=float)):
        a = _gauss_hermite_moment(float(p), sigma, nodes)
        b = _gauss_hermite_moment(float(p), sigma, 2 * nodes)
        finite = math.isfinite(a) and math.isfinite(b) and abs(b - a) <= rel_tol * abs(a)
        out.append(ExplosionProbe(float(p), finite, b if finite else math.inf))
    return out


def gaussian_moment(p: float, sigma: float) -> float:
    """Closed form ``(1 - p(p-1) sigma^2)^{-1/2}`` where finite."""
    d = 1 - p * (p - 1) * sigma**2
    return math.inf if d <= 0 else d**-0.5


def with_scheme(config: SimConfig, scheme: str) -> SimConfig:
    return replace(config, scheme=scheme)
