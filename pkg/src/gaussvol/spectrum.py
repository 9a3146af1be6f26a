"""Karhunen-Loeve spectra of volatility covariance operators on ``[0, T]``.

Two routes are provided.  OU-family kernels use the closed-form frequency
equation, eigenvalues ``sigma^2 / (w_n^2 + q^2)`` and explicit eigenfunctions.
Any other kernel goes through a trapezoid Nystrom discretisation whose
eigenvalues are Richardson-Romberg extrapolated across grid sizes.

Eigenfunction signs are fixed so that ``int_0^T e_n(t) dt >= 0``; when that
integral vanishes, ``e_n`` is made non-negative just to the right of zero.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, linalg, optimize

from .exceptions import NumericalError, ValidationError
from .model import (
    CovarianceKernel,
    MeanFunction,
    ModelSpec,
    TabulatedKernel,
    ou_parameters,
)

FloatArray = NDArray[np.float64]

ANALYTIC_GROUPING_TOL = 1e-8
NYSTROM_GROUPING_TOL = 1e-4
TRUNCATION_RATIO = 1e-8
TRUNCATION_TRACE_FRACTION = 0.9999
MAX_MODES = 512
DEFAULT_GRIDS = (512, 1024)
# samples per analytic eigenfunction stored in a Spectrum
ANALYTIC_SAMPLE_POINTS = 2049


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Truncated Karhunen-Loeve data of a Gaussian volatility model.

    Attributes
    ----------
    eigenvalues
        ``lambda_1 >= lambda_2 >= ... > 0``.
    grid, eigenfunctions
        Time grid and the samples ``eigenfunctions[n, i] = e_{n+1}(grid[i])``.
    multiplicities, distinct_values
        Group sizes ``n_k`` and group representatives ``rho_k``.
    delta_coeffs
        ``delta_n = <m, e_n>``.
    s, tau
        ``s = int m^2`` and ``tau = s - sum delta_n^2`` over retained modes.
    trace
        ``int_0^T Q(t, t) dt``.
    """

    eigenvalues: FloatArray
    grid: FloatArray
    eigenfunctions: FloatArray
    multiplicities: tuple[int, ...]
    distinct_values: FloatArray
    delta_coeffs: FloatArray
    s: float
    tau: float
    trace: float
    T: float
    metadata: dict[str, Any] = field(default_factory=dict)
    _analytic: Callable[[int, FloatArray], FloatArray] | None = field(default=None, repr=False)

    @property
    def truncation_count(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def n1(self) -> int:
        return self.multiplicities[0]

    @property
    def delta(self) -> float:
        """``sum_{n <= n_1} delta_n^2 / lambda_1``."""
        return float(np.sum(self.delta_coeffs[: self.n1] ** 2) / self.lambda1)

    @property
    def tail_trace(self) -> float:
        """Trace not captured by the retained modes (non-negative)."""
        return max(self.trace - float(np.sum(self.eigenvalues)), 0.0)

    def eigenfunction(self, n: int, t: ArrayLike) -> FloatArray:
        """Evaluate ``e_n`` (1-based) at ``t``; closed form when available, else linear interpolation."""
        if not 1 <= n <= self.truncation_count:
            raise ValidationError(f"mode index {n} outside 1..{self.truncation_count}")
        t = np.asarray(t, dtype=float)
        if self._analytic is not None:
            return self._analytic(n, t)
        return np.interp(t, self.grid, self.eigenfunctions[n - 1])

    def with_modes(self, count: int) -> Spectrum:
        """Keep only the leading ``count`` modes (regrouping multiplicities)."""
        count = min(count, self.truncation_count)
        lam = self.eigenvalues[:count]
        tol = self.metadata.get("grouping_tolerance", ANALYTIC_GROUPING_TOL)
        mult, rho = group_multiplicities(lam, tol)
        delta = self.delta_coeffs[:count]
        return Spectrum(
            lam, self.grid, self.eigenfunctions[:count], mult, rho, delta,
            self.s, self.s - float(np.sum(delta**2)), self.trace, self.T,
            dict(self.metadata, truncation_count=count), self._analytic,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "grid": self.grid.tolist(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "multiplicities": list(self.multiplicities),
            "distinct_values": self.distinct_values.tolist(),
            "delta_coeffs": self.delta_coeffs.tolist(),
            "s": self.s,
            "tau": self.tau,
            "trace": self.trace,
            "T": self.T,
            "truncation_count": self.truncation_count,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Spectrum:
        try:
            return cls(
                eigenvalues=np.asarray(data["eigenvalues"], dtype=float),
                grid=np.asarray(data["grid"], dtype=float),
                eigenfunctions=np.asarray(data["eigenfunctions"], dtype=float),
                multiplicities=tuple(int(n) for n in data["multiplicities"]),
                distinct_values=np.asarray(data["distinct_values"], dtype=float),
                delta_coeffs=np.asarray(data["delta_coeffs"], dtype=float),
                s=float(data["s"]),
                tau=float(data["tau"]),
                trace=float(data["trace"]),
                T=float(data["T"]),
                metadata=dict(data.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed spectrum document: {exc!r}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> Spectrum:
        return cls.from_dict(json.loads(Path(path).read_text()))


def kernel_hash(kernel: CovarianceKernel, mean: MeanFunction, T: float) -> str:
    payload = json.dumps({"kernel": kernel.to_dict(), "mean": mean.to_dict(), "T": T}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Grouping and truncation
# ---------------------------------------------------------------------------


def group_multiplicities(eigenvalues: ArrayLike, tolerance: float) -> tuple[tuple[int, ...], FloatArray]:
    """Merge neighbouring eigenvalues whose relative gap is below ``tolerance``.

    Returns the group sizes ``n_k`` and the group means ``rho_k``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0:
        return (), np.empty(0)
    if np.any(np.diff(lam) > 1e-15 * abs(lam[0])):
        raise ValidationError("eigenvalues must be sorted non-increasing")
    sizes: list[int] = []
    reps: list[float] = []
    start = 0
    for i in range(1, lam.size + 1):
        if i == lam.size or abs(lam[i - 1] - lam[i]) >= tolerance * abs(lam[i - 1]):
            sizes.append(i - start)
            reps.append(float(np.mean(lam[start:i])))
            start = i
    return tuple(sizes), np.asarray(reps)


def truncation_count(eigenvalues: ArrayLike, trace: float, cap: int = MAX_MODES) -> int:
    """Modes to keep: stop once ``lambda_n / lambda_1 < 1e-8`` or 99.99% of the trace is captured."""
    lam = np.asarray(eigenvalues, dtype=float)
    keep = 0
    acc = 0.0
    for value in lam[:cap]:
        if value <= 0 or value / lam[0] < TRUNCATION_RATIO:
            break
        keep += 1
        acc += value
        if acc >= TRUNCATION_TRACE_FRACTION * trace:
            break
    return max(keep, 1)


# ---------------------------------------------------------------------------
# Analytic OU route
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OuRoots:
    """Positive roots of the OU frequency equation and the eigenfunction normalisers."""

    w: FloatArray
    zero_start: bool
    K: FloatArray
    q: float
    sigma: float
    sigma0: float
    T: float

    def residual(self, w: ArrayLike | None = None) -> FloatArray:
        return _frequency_function(np.asarray(self.w if w is None else w), self.q, self.sigma, self.sigma0, self.T)


def _frequency_function(w: ArrayLike, q: float, sigma: float, sigma0: float, T: float) -> FloatArray:
    w = np.asarray(w, dtype=float)
    if sigma0 == 0.0:
        return w * np.cos(w * T) + q * np.sin(w * T)
    return sigma**2 * w * np.cos(w * T) + (q * sigma**2 - (w**2 + q**2) * sigma0**2) * np.sin(w * T)


def _normaliser(w: FloatArray, q: float, sigma: float, sigma0: float, T: float) -> FloatArray:
    if sigma0 == 0.0:
        return 1.0 / np.sqrt(T / 2 - np.sin(2 * w * T) / (4 * w))
    c = sigma**2 - q * sigma0**2
    # the cross term of int (a cos + b sin)^2 carries no 1/w factor
    inv_sq = (
        0.5 * sigma0**2 * c * (1 - np.cos(2 * w * T))
        + 0.5 * sigma0**4 * w**2 * (T + np.sin(2 * w * T) / (2 * w))
        + 0.5 * c**2 * (T - np.sin(2 * w * T) / (2 * w))
    )
    return 1.0 / np.sqrt(inv_sq)


def ou_frequencies(q: float, sigma: float, sigma0: float, T: float, count: int) -> OuRoots:
    """First ``count`` positive roots of the OU frequency equation.

    Root ``n`` is bracketed in ``((n-1) pi / T, n pi / T)``: at ``w = n pi / T``
    the equation equals ``sigma^2 w (-1)^n`` (or ``w (-1)^n``), so consecutive
    multiples of ``pi / T`` carry alternating signs.
    """
    if not (q > 0 and sigma > 0 and sigma0 >= 0 and T > 0):
        raise ValidationError("need q > 0, sigma > 0, sigma0 >= 0, T > 0")
    if count < 1:
        raise ValidationError("count must be >= 1")
    # slope of the equation at w = 0+; a non-positive slope means an imaginary root
    slope0 = 1 + q * T if sigma0 == 0 else sigma**2 * (1 + q * T) - q**2 * sigma0**2 * T
    if slope0 <= 0:
        raise NumericalError(
            "initial variance too large for a real leading frequency; use nystrom_spectrum for this model"
        )

    def f(w: float) -> float:
        return float(_frequency_function(w, q, sigma, sigma0, T))

    step = math.pi / T
    roots = np.empty(count)
    for n in range(1, count + 1):
        lo = (n - 1) * step if n > 1 else step * 1e-12
        hi = n * step
        if f(lo) * f(hi) > 0:
            raise NumericalError(f"no sign change for OU root {n} in its bracket")
        roots[n - 1] = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    K = _normaliser(roots, q, sigma, sigma0, T)
    return OuRoots(roots, sigma0 == 0.0, K, q, sigma, sigma0, T)


def _ou_raw_eigenfunction(roots: OuRoots, n: int, t: FloatArray) -> FloatArray:
    w = roots.w[n - 1]
    K = roots.K[n - 1]
    if roots.zero_start:
        return K * np.sin(w * t)
    return K * (roots.sigma0**2 * w * np.cos(w * t) + (roots.sigma**2 - roots.q * roots.sigma0**2) * np.sin(w * t))


def _ou_integral_sign(roots: OuRoots) -> FloatArray:
    """Sign making ``int_0^T e_n >= 0`` for the raw closed-form eigenfunctions."""
    w, K, T = roots.w, roots.K, roots.T
    sin_int = (1 - np.cos(w * T)) / w
    if roots.zero_start:
        integral = K * sin_int
        head = K
    else:
        c = roots.sigma**2 - roots.q * roots.sigma0**2
        integral = K * (roots.sigma0**2 * np.sin(w * T) + c * sin_int)
        # e_n(0) = K sigma0^2 w; for a vanishing integral fall back to that
        head = K * roots.sigma0**2 * w + np.where(roots.sigma0 == 0, K * c, 0.0)
    scale = np.abs(K) * (roots.sigma**2 + roots.sigma0**2 * w) * T
    tied = np.abs(integral) <= 1e-14 * scale
    sign = np.where(integral >= 0, 1.0, -1.0)
    return np.where(tied, np.where(head >= 0, 1.0, -1.0), sign)


def delta1_stein_stein(q: float, sigma: float, sigma0: float, m: float, m0: float, T: float) -> float:
    """Closed-form ``delta_1 = int_0^T m(t) e_1(t) dt`` for the OU mean ``m(t)``.

    The sign matches the eigenfunction convention ``int_0^T e_1 >= 0``.
    """
    roots = ou_frequencies(q, sigma, sigma0, T, 1)
    w, K = roots.w[0], roots.K[0]
    sign = float(_ou_integral_sign(roots)[0])
    eqT = math.exp(-q * T)
    if sigma0 == 0.0:
        norm = math.sqrt(T / 2 - math.sin(2 * w * T) / (4 * w))
        value = (m * q**2 * (1 - math.cos(w * T)) + w**2 * (m0 - m * math.cos(w * T))) / (w * (q**2 + w**2) * norm)
        return sign * value
    c = sigma**2 - q * sigma0**2
    value = (
        K * m * c * (1 - math.cos(w * T)) / w
        + K * sigma0**2 * math.sin(w * T) * ((m0 - m) * eqT + m)
        + K * sigma**2 * (m0 - m) * (w * (1 - eqT * math.cos(w * T)) - q * eqT * math.sin(w * T)) / (q**2 + w**2)
    )
    return sign * value


def _ou_trace(q: float, sigma: float, sigma0: float, T: float) -> float:
    # int_0^T [sigma^2/(2q) + e^{-2qt}(sigma0^2 - sigma^2/(2q))] dt
    v = sigma**2 / (2 * q)
    return v * T + (sigma0**2 - v) * (-math.expm1(-2 * q * T)) / (2 * q)


def _mean_square(mean_fn: Callable[[float], float], T: float) -> float:
    return integrate.quad(lambda t: float(mean_fn(t)) ** 2, 0.0, T, epsabs=0.0, epsrel=1e-12, limit=200)[0]


def ou_spectrum(
    q: float,
    sigma: float,
    sigma0: float,
    m: float,
    m0: float,
    T: float,
    count: int | None = None,
) -> Spectrum:
    """Closed-form spectrum of the OU volatility with mean ``e^{-qt} m0 + (1 - e^{-qt}) m``.

    ``count=None`` applies the default truncation rule.
    """
    trace = _ou_trace(q, sigma, sigma0, T)
    n_req = MAX_MODES if count is None else int(count)
    roots = ou_frequencies(q, sigma, sigma0, T, n_req)
    lam = sigma**2 / (roots.w**2 + q**2)
    keep = truncation_count(lam, trace, cap=n_req) if count is None else n_req
    if keep < n_req:
        roots = OuRoots(roots.w[:keep], roots.zero_start, roots.K[:keep], q, sigma, sigma0, T)
        lam = lam[:keep]
    signs = _ou_integral_sign(roots)

    def analytic(n: int, t: FloatArray) -> FloatArray:
        return signs[n - 1] * _ou_raw_eigenfunction(roots, n, t)

    def mean_fn(t: float) -> float:
        return math.exp(-q * t) * m0 + (-math.expm1(-q * t)) * m

    delta = np.empty(keep)
    delta[0] = delta1_stein_stein(q, sigma, sigma0, m, m0, T)
    c = sigma**2 - q * sigma0**2
    for i in range(1, keep):
        w = roots.w[i]
        if roots.zero_start:
            cos_part, sin_part = 0.0, roots.K[i]
        else:
            cos_part, sin_part = roots.K[i] * sigma0**2 * w, roots.K[i] * c
        total = 0.0
        if cos_part:
            total += cos_part * integrate.quad(mean_fn, 0.0, T, weight="cos", wvar=w)[0]
        total += sin_part * integrate.quad(mean_fn, 0.0, T, weight="sin", wvar=w)[0]
        delta[i] = signs[i] * total

    s = _mean_square(mean_fn, T)
    grid = np.linspace(0.0, T, ANALYTIC_SAMPLE_POINTS)
    efuncs = np.vstack([analytic(n, grid) for n in range(1, keep + 1)])
    mult, rho = group_multiplicities(lam, ANALYTIC_GROUPING_TOL)
    meta = {
        "method": "analytic_ou",
        "q": q, "sigma": sigma, "sigma0": sigma0, "m": m, "m0": m0,
        "frequencies": roots.w.tolist(),
        "grouping_tolerance": ANALYTIC_GROUPING_TOL,
    }
    return Spectrum(lam, grid, efuncs, mult, rho, delta, s, s - float(np.sum(delta**2)), trace, T, meta, analytic)


# ---------------------------------------------------------------------------
# Nystrom route
# ---------------------------------------------------------------------------


def trapezoid_weights(n_intervals: int, T: float) -> FloatArray:
    w = np.full(n_intervals + 1, T / n_intervals)
    w[0] = w[-1] = 0.5 * T / n_intervals
    return w


def kernel_matrix(kernel: CovarianceKernel, grid: FloatArray) -> FloatArray:
    """``Q(grid_i, grid_j)``; stationary kernels are built from one evaluation per lag."""
    autocov = getattr(kernel, "autocovariance", None)
    if autocov is not None:
        col = autocov(grid - grid[0])
        return linalg.toeplitz(col)
    return kernel(grid[:, None], grid[None, :])


def _nystrom_level(kernel: CovarianceKernel, T: float, n_intervals: int, count: int, check_psd: bool):
    grid = np.linspace(0.0, T, n_intervals + 1)
    weights = trapezoid_weights(n_intervals, T)
    root_w = np.sqrt(weights)
    Q = kernel_matrix(kernel, grid)
    A = root_w[:, None] * Q * root_w[None, :]
    size = grid.size
    k = min(count, size)
    vals, vecs = linalg.eigh(A, subset_by_index=[size - k, size - 1])
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if check_psd:
        low = linalg.eigh(A, eigvals_only=True, subset_by_index=[0, 0])[0]
        if low < -1e-10 * max(vals[0], 0.0):
            raise ValidationError(f"kernel is not positive semidefinite (eigenvalue {low:.3e})")
    return grid, weights, vals, vecs / root_w[:, None]


def richardson(levels: Sequence[FloatArray], sizes: Sequence[int]) -> FloatArray:
    """Extrapolate eigenvalue sequences whose error expands in even powers of ``1/N``.

    Neville's scheme in ``h^2 = N^-2``; with doubling grids it reduces to Romberg.
    """
    table = [np.asarray(v, dtype=float) for v in levels]
    step = 1
    while len(table) > 1:
        table = [
            ((sizes[i + step] / sizes[i]) ** 2 * table[i + 1] - table[i]) / ((sizes[i + step] / sizes[i]) ** 2 - 1.0)
            for i in range(len(table) - 1)
        ]
        step += 1
    return table[0]


def _fix_signs(grid: FloatArray, weights: FloatArray, efuncs: FloatArray) -> FloatArray:
    integrals = efuncs @ weights
    scale = np.sqrt(grid[-1])
    head = efuncs[:, 1]
    sign = np.where(np.abs(integrals) <= 1e-12 * scale, np.where(head >= 0, 1.0, -1.0), np.sign(integrals))
    return efuncs * sign[:, None]


def nystrom_spectrum(
    kernel: CovarianceKernel,
    mean: MeanFunction,
    T: float,
    grid_sizes: Sequence[int] = DEFAULT_GRIDS,
    count: int = 50,
) -> Spectrum:
    """Trapezoid Nystrom spectrum with Richardson-Romberg extrapolated eigenvalues.

    ``grid_sizes`` are interval counts.  Eigenfunctions come from the finest
    grid and are orthonormal under its trapezoid rule.
    """
    sizes = [int(n) for n in grid_sizes]
    if len(sizes) < 2 or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError("grid_sizes must be strictly increasing with at least two entries")
    if count < 1:
        raise ValidationError("count must be >= 1")
    count = min(count, sizes[0] + 1, MAX_MODES)
    check_psd = isinstance(kernel, TabulatedKernel)
    levels = []
    for i, n in enumerate(sizes):
        grid, weights, vals, efuncs = _nystrom_level(kernel, T, n, count, check_psd and i == len(sizes) - 1)
        levels.append(vals[:count])
    lam = richardson(levels, sizes)
    # extrapolation can reorder tiny trailing modes; keep the positive, sorted prefix
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    efuncs = efuncs[:, :count].T[order]
    positive = int(np.argmax(lam <= 0)) if np.any(lam <= 0) else lam.size
    lam, efuncs = lam[:positive], efuncs[:positive]
    efuncs = _fix_signs(grid, weights, efuncs)

    trace = float(np.sum(weights * np.diagonal(kernel_matrix(kernel, grid))))
    keep = truncation_count(lam, trace, cap=lam.size)
    lam, efuncs = lam[:keep], efuncs[:keep]
    mvals = mean(grid)
    delta = efuncs @ (weights * mvals)
    s = float(np.sum(weights * mvals**2))
    mult, rho = group_multiplicities(lam, NYSTROM_GROUPING_TOL)
    meta = {
        "method": "nystrom",
        "grid_sizes": sizes,
        "kernel_hash": kernel_hash(kernel, mean, T),
        "grouping_tolerance": NYSTROM_GROUPING_TOL,
    }
    return Spectrum(lam, grid, efuncs, mult, rho, delta, s, s - float(np.sum(delta**2)), trace, T, meta)


def model_spectrum(spec: ModelSpec, count: int | None = None, grid_sizes: Sequence[int] = DEFAULT_GRIDS) -> Spectrum:
    """Analytic spectrum for OU-family models, Nystrom otherwise."""
    ou = ou_parameters(spec)
    if ou is not None:
        try:
            return ou_spectrum(ou.q, ou.sigma, ou.sigma0, ou.m, ou.m0, spec.T, count)
        except NumericalError:
            pass
    return nystrom_spectrum(spec.kernel, spec.mean, spec.T, grid_sizes, count or 200)
