"""Second-chaos representation of the integrated variance and its tail constants.

The integrated variance ``Gamma_T = int_0^T X_t^2 dt`` is the weighted sum

    Gamma_T = sum_n lambda_n (Z_n + delta_n / sqrt(lambda_n))^2 + tau

with i.i.d. standard normal ``Z_n``.  Its density tail is governed by the top
eigenvalue ``lambda_1``, its multiplicity ``n_1``, the noncentrality
``delta = sum_{n <= n_1} delta_n^2 / lambda_1`` and the product constant ``A``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from ._rng import batch_generator, batch_sizes, map_batches
from .exceptions import DomainError, ValidationError
from .spectrum import Spectrum

FloatArray = NDArray[np.float64]

TAU_CLAMP = 1e-10
SAMPLE_BATCH = 50_000
# relative size below which all delta_n count as zero
CENTERED_TOL = 1e-12


@dataclass(frozen=True)
class ChaosConstants:
    """Tail constants of ``Gamma_T``.

    ``C`` is the prefactor of the density asymptotic; ``B_tilde`` and
    ``C_tilde`` are the mixing-density constants at ``t = T``.
    """

    lambda1: float
    n1: int
    delta: float
    A: float
    C: float
    tau: float
    s: float
    B_tilde: float
    C_tilde: float
    centered: bool
    T: float
    log_A: float
    log_C: float
    tail_correction: float
    mean_gamma: float

    @property
    def branch(self) -> str:
        return "noncentral" if self.delta > 0 else "central"

    def to_dict(self) -> dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, object]) -> ChaosConstants:
        try:
            return cls(**{k: data[k] for k in cls.__dataclass_fields__})  # type: ignore[arg-type]
        except KeyError as exc:
            raise ValidationError(f"chaos document missing field {exc}") from None


def clamp_tau(tau: float, s: float) -> float:
    if tau >= 0:
        return tau
    if abs(tau) <= TAU_CLAMP * max(s, 1.0):
        return 0.0
    raise ValidationError(f"tau = {tau:.3e} is materially negative (Bessel inequality violated)")


def chaos_constants(spec: Spectrum, T: float | None = None) -> ChaosConstants:
    """Constants ``A``, ``C``, ``delta``, ``B_tilde``, ``C_tilde`` from a truncated spectrum.

    The product for ``A`` runs over the retained modes; the missing trace is
    added to ``log A`` as ``(trace remainder) / (2 lambda_1)``, the first-order
    term of ``log(lambda_1 / (lambda_1 - rho))``.
    """
    T = spec.T if T is None else float(T)
    if T <= 0:
        raise DomainError("T must be positive")
    lam1 = spec.lambda1
    n1 = spec.n1
    rho = spec.distinct_values
    mult = np.asarray(spec.multiplicities)
    if rho.size > 1 and rho[1] >= lam1:
        raise ValidationError("second eigenvalue group is not below lambda_1")
    d2 = spec.delta_coeffs**2
    bounds = np.concatenate([[0], np.cumsum(mult)])
    group_d2 = np.add.reduceat(d2, bounds[:-1]) if d2.size else np.zeros(0)

    lower = rho[1:]
    gap = lam1 - lower
    log_A = float(np.sum(0.5 * mult[1:] * np.log(lam1 / gap)) + 0.5 * np.sum(group_d2[1:] / gap))
    tail = spec.tail_trace / (2 * lam1)
    log_A += tail

    top_d2 = float(group_d2[0])
    s = float(spec.s)
    tau = clamp_tau(float(spec.tau), s)
    scale = math.sqrt(max(s, 0.0)) + math.sqrt(spec.trace)
    centered = bool(np.all(np.abs(spec.delta_coeffs) <= CENTERED_TOL * scale))
    delta = 0.0 if top_d2 <= (CENTERED_TOL * scale) ** 2 else top_d2 / lam1

    if delta > 0:
        log_C = (
            log_A - math.log(2 * math.sqrt(2 * math.pi)) - 0.5 * math.log(lam1)
            - (n1 - 1) / 4 * math.log(top_d2) + (tau - top_d2) / (2 * lam1)
        )
    else:
        # a residual tau only shifts the law, contributing e^{tau / (2 lambda_1)}
        log_C = log_A - n1 / 2 * math.log(2) - special.gammaln(n1 / 2) - n1 / 2 * math.log(lam1) + tau / (2 * lam1)

    return ChaosConstants(
        lambda1=lam1,
        n1=n1,
        delta=delta,
        A=math.exp(log_A),
        C=math.exp(log_C),
        tau=tau,
        s=s,
        B_tilde=math.sqrt(delta * T / lam1),
        C_tilde=T / (2 * lam1),
        centered=centered,
        T=T,
        log_A=float(log_A),
        log_C=float(log_C),
        tail_correction=float(tail),
        mean_gamma=float(spec.trace + s),
    )


# ---------------------------------------------------------------------------
# Chi-squared densities
# ---------------------------------------------------------------------------


def _check_positive(x: ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("density argument must be positive")
    return x


def log_noncentral_chi2_density(x: ArrayLike, n: float, lam: float) -> FloatArray:
    """Log-density of the noncentral chi-squared law with ``n`` degrees of freedom."""
    x = _check_positive(x)
    if n < 1 or lam < 0:
        raise DomainError("need n >= 1 and lambda >= 0")
    if lam == 0:
        return -n / 2 * math.log(2) - special.gammaln(n / 2) + (n - 2) / 2 * np.log(x) - x / 2
    z = np.sqrt(lam * x)
    # ive(v, z) = I_v(z) e^{-z}
    return math.log(0.5) + (n / 4 - 0.5) * np.log(x / lam) - (x + lam) / 2 + np.log(special.ive(n / 2 - 1, z)) + z


def noncentral_chi2_density(x: ArrayLike, n: float, lam: float) -> FloatArray:
    """Bessel form for ``lam > 0``, Gamma form for ``lam = 0``."""
    return np.exp(log_noncentral_chi2_density(x, n, lam))


def log_noncentral_chi2_density_asymptotic(x: ArrayLike, n: float, lam: float) -> FloatArray:
    """Log of the large-``x`` form ``(2 sqrt(2 pi))^-1 lam^{-(n-1)/4} x^{(n-3)/4} e^{sqrt(lam x)} e^{-(x+lam)/2}``."""
    x = _check_positive(x)
    if lam <= 0:
        raise DomainError("asymptotic form needs lambda > 0; use the central density")
    return (
        -math.log(2 * math.sqrt(2 * math.pi)) - (n - 1) / 4 * math.log(lam)
        + (n - 3) / 4 * np.log(x) + np.sqrt(lam * x) - (x + lam) / 2
    )


def noncentral_chi2_density_asymptotic(x: ArrayLike, n: float, lam: float) -> FloatArray:
    return np.exp(log_noncentral_chi2_density_asymptotic(x, n, lam))


# ---------------------------------------------------------------------------
# Densities of Gamma_T and of the mixing variable
# ---------------------------------------------------------------------------


def log_gamma_density_asymptotic(x: ArrayLike, constants: ChaosConstants) -> tuple[FloatArray, str]:
    x = _check_positive(x)
    c = constants
    if c.delta > 0:
        log_p = c.log_C + (c.n1 - 3) / 4 * np.log(x) + math.sqrt(c.delta / c.lambda1) * np.sqrt(x) - x / (2 * c.lambda1)
        return log_p, "noncentral"
    return c.log_C + (c.n1 - 2) / 2 * np.log(x) - x / (2 * c.lambda1), "central"


def gamma_density_asymptotic(x: ArrayLike, constants: ChaosConstants) -> tuple[FloatArray, str]:
    """Tail approximation of the density of ``Gamma_T`` and the branch used."""
    log_p, branch = log_gamma_density_asymptotic(x, constants)
    return np.exp(log_p), branch


def mixing_density_asymptotic(y: ArrayLike, constants: ChaosConstants, t: float | None = None) -> FloatArray:
    """Tail approximation of the density of ``sqrt(Gamma_t / t)``.

    Obtained from :func:`gamma_density_asymptotic` by ``p~(y) = 2 t y p_t(t y^2)``.
    """
    y = _check_positive(y)
    c = constants
    t = c.T if t is None else float(t)
    C_tilde = t / (2 * c.lambda1)
    if c.delta > 0:
        log_A_tilde = math.log(2) + c.log_C + (c.n1 + 1) / 4 * math.log(t)
        B_tilde = math.sqrt(c.delta * t / c.lambda1)
        return np.exp(log_A_tilde + (c.n1 - 1) / 2 * np.log(y) + B_tilde * y - C_tilde * y**2)
    log_A_tilde = math.log(2) + c.log_C + c.n1 / 2 * math.log(t)
    return np.exp(log_A_tilde + (c.n1 - 1) * np.log(y) - C_tilde * y**2)


def mixing_crossover(constants: ChaosConstants) -> float:
    """Point ``3 sqrt(E[Gamma_T] / T)`` beyond which the mixing asymptotic is used."""
    return 3.0 * math.sqrt(constants.mean_gamma / constants.T)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_integrated_variance(
    spec: Spectrum,
    count: int,
    seed: int,
    *,
    modes: int | None = None,
    threads: int | None = None,
    batch_size: int = SAMPLE_BATCH,
    batch_offset: int = 0,
) -> FloatArray:
    """Draw ``Gamma_T = sum lambda_n (Z_n + delta_n / sqrt(lambda_n))^2 + tau``.

    The result depends only on ``seed``, ``batch_size`` and ``batch_offset``
    (the index of the first batch), never on ``threads``.
    Modes beyond ``modes`` are folded into ``tau`` through their mean.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    k = spec.truncation_count if modes is None else min(modes, spec.truncation_count)
    lam = spec.eigenvalues[:k]
    shift = spec.delta_coeffs[:k] / np.sqrt(lam)
    tau = clamp_tau(float(spec.tau), spec.s)
    if k < spec.truncation_count:
        # the dropped modes enter through their mean
        rest = spec.eigenvalues[k:]
        tau += float(np.sum(rest) + np.sum(spec.delta_coeffs[k:] ** 2))
    sizes = batch_sizes(count, batch_size)

    def run(i: int) -> FloatArray:
        rng = batch_generator(seed, batch_offset + i)
        z = rng.standard_normal((sizes[i], k))
        z += shift
        np.square(z, out=z)
        return z @ lam + tau

    return np.concatenate(map_batches(run, len(sizes), threads)) if sizes else np.empty(0)


def tail_log_slope(
    samples: ArrayLike,
    constants: ChaosConstants,
    band: tuple[float, float] = (1e-5, 1e-3),
) -> float:
    """Slope of the empirical log-CCDF against ``x`` on a deep-tail quantile band.

    The known sub-exponential factors ``x^a exp(b sqrt(x))`` of the density
    asymptotic are removed first, so the fitted slope estimates ``-1/(2 lambda_1)``
    directly.
    """
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    n = x.size
    lo, hi = band
    i0 = max(int(math.ceil(lo * n)), 10)
    i1 = int(hi * n)
    if i1 - i0 < 20:
        raise ValidationError("not enough samples in the tail band")
    idx = np.arange(i0, i1)
    xs = x[idx]
    log_ccdf = np.log((idx + 0.5) / n)
    c = constants
    if c.delta > 0:
        adjust = (c.n1 - 3) / 4 * np.log(xs) + math.sqrt(c.delta / c.lambda1) * np.sqrt(xs)
    else:
        adjust = (c.n1 - 2) / 2 * np.log(xs)
    slope, _ = np.polyfit(xs, log_ccdf - adjust, 1)
    return float(slope)
