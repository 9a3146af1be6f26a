"""Gaussian volatility model specifications.

A model is a mean function ``m(t)`` and a covariance kernel ``Q(t, s)`` for the
volatility process ``X`` on ``[0, T]``, together with the spot ``s0`` and the
short rate ``r``.  The asset follows ``dS = r S dt + |X| S dW`` with ``W``
independent of ``X``.

Every mean and kernel variant is a small frozen dataclass that evaluates
vectorised over numpy arrays and serialises to a JSON-compatible dict carrying a
``variant`` discriminator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, special
from scipy.interpolate import RegularGridInterpolator

from .exceptions import DomainError, ValidationError

FloatArray = NDArray[np.float64]

# 1001 uniform points, endpoints included
DIAGONAL_GRID_POINTS = 1001


# ---------------------------------------------------------------------------
# Mean functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantMean:
    level: float
    variant: ClassVar[str] = "constant"

    def __call__(self, t: ArrayLike) -> FloatArray:
        return np.full(np.shape(t), float(self.level))

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "level": self.level}


@dataclass(frozen=True)
class OuRelaxationMean:
    """``m(t) = e^{-qt} m0 + (1 - e^{-qt}) m``."""

    m0: float
    m: float
    q: float
    variant: ClassVar[str] = "ou_relaxation"

    def __call__(self, t: ArrayLike) -> FloatArray:
        decay = np.exp(-self.q * np.asarray(t, dtype=float))
        return decay * self.m0 + (1.0 - decay) * self.m

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "m0": self.m0, "m": self.m, "q": self.q}


@dataclass(frozen=True)
class TabulatedMean:
    """Mean given on a strictly increasing grid, linearly interpolated."""

    grid: tuple[float, ...]
    values: tuple[float, ...]
    variant: ClassVar[str] = "tabulated"

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or g.size != len(self.values):
            raise ValidationError("tabulated mean needs matching grid/values of length >= 2")
        if np.any(np.diff(g) <= 0):
            raise ValidationError("tabulated mean grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("tabulated mean values must be finite")

    def __call__(self, t: ArrayLike) -> FloatArray:
        return np.interp(np.asarray(t, dtype=float), self.grid, self.values)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "grid": list(self.grid), "values": list(self.values)}


MeanFunction = ConstantMean | OuRelaxationMean | TabulatedMean


# ---------------------------------------------------------------------------
# Covariance kernels
# ---------------------------------------------------------------------------


def _pair(t: ArrayLike, s: ArrayLike) -> tuple[FloatArray, FloatArray]:
    return np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))


@dataclass(frozen=True)
class BrownianMotionKernel:
    scale: float = 1.0
    variant: ClassVar[str] = "brownian_motion"
    stationary: ClassVar[bool] = False

    def __call__(self, t: ArrayLike, s: ArrayLike) -> FloatArray:
        t, s = _pair(t, s)
        return self.scale**2 * np.minimum(t, s)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "scale": self.scale}


@dataclass(frozen=True)
class BrownianBridgeKernel:
    """Brownian bridge pinned at zero at ``t = 0`` and ``t = length``."""

    length: float
    scale: float = 1.0
    variant: ClassVar[str] = "brownian_bridge"
    stationary: ClassVar[bool] = False

    def __call__(self, t: ArrayLike, s: ArrayLike) -> FloatArray:
        t, s = _pair(t, s)
        return self.scale**2 * (np.minimum(t, s) - t * s / self.length)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "scale": self.scale, "length": self.length}


@dataclass(frozen=True)
class OuRandomStartKernel:
    """OU process ``dX = q(m - X)dt + sigma dZ`` with ``Var X_0 = sigma0**2``."""

    q: float
    sigma: float
    sigma0: float
    variant: ClassVar[str] = "ou_random_start"
    stationary: ClassVar[bool] = False

    def __post_init__(self) -> None:
        if self.q <= 0 or self.sigma <= 0 or self.sigma0 < 0:
            raise ValidationError("OU kernel needs q > 0, sigma > 0, sigma0 >= 0")

    def __call__(self, t: ArrayLike, s: ArrayLike) -> FloatArray:
        t, s = _pair(t, s)
        q = self.q
        return np.exp(-q * (t + s)) * (
            self.sigma0**2 + self.sigma**2 / (2 * q) * np.expm1(2 * q * np.minimum(t, s))
        )

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "q": self.q, "sigma": self.sigma, "sigma0": self.sigma0}


@dataclass(frozen=True)
class OuDeterministicStartKernel(OuRandomStartKernel):
    sigma0: float = 0.0
    variant: ClassVar[str] = "ou_deterministic_start"

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "q": self.q, "sigma": self.sigma}


@dataclass(frozen=True)
class OuStationaryKernel:
    """``Q(t, s) = sigma^2 / (2q) * exp(-q |t - s|)``."""

    q: float
    sigma: float
    variant: ClassVar[str] = "ou_stationary"
    stationary: ClassVar[bool] = True

    def __post_init__(self) -> None:
        if self.q <= 0 or self.sigma <= 0:
            raise ValidationError("OU kernel needs q > 0 and sigma > 0")

    @property
    def sigma0(self) -> float:
        return self.sigma / math.sqrt(2 * self.q)

    def autocovariance(self, lag: ArrayLike) -> FloatArray:
        lag = np.abs(np.asarray(lag, dtype=float))
        return self.sigma**2 / (2 * self.q) * np.exp(-self.q * lag)

    def __call__(self, t: ArrayLike, s: ArrayLike) -> FloatArray:
        t, s = _pair(t, s)
        return self.autocovariance(t - s)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "q": self.q, "sigma": self.sigma}


def fou_autocovariance(lag: ArrayLike, q: float, sigma: float, H: float) -> FloatArray:
    """Autocovariance of the stationary fBm-driven OU process.

    With ``X_t = sigma * int_{-inf}^t e^{-q(t-u)} dB^H_u`` and ``u = q|lag|``::

        r(lag) = sigma^2 q^{-2H} ( 1/4 [ int_0^inf e^{-y} (u + y)^{2H} dy
                                         + Gamma(2H + 1) e^{-u}
                                         + int_0^u e^{-(u - x)} x^{2H} dx ]
                                   - u^{2H} / 2 )

    The finite integral is accumulated over the sorted lags with adaptive
    quadrature.  ``H = 1/2`` recovers ``sigma^2/(2q) e^{-q|lag|}``.
    """
    a = 2.0 * H
    shape = np.shape(lag)
    u = q * np.abs(np.asarray(lag, dtype=float)).ravel()
    flat = u
    order = np.argsort(flat, kind="stable")
    inner = np.empty_like(flat)
    acc, prev = 0.0, 0.0
    for idx in order:
        x = flat[idx]
        if x > prev:
            piece, _ = integrate.quad(
                lambda y, x=x: math.exp(y - x) * y**a, prev, x, epsabs=0.0, epsrel=1e-13, limit=200
            )
            acc = acc * math.exp(prev - x) + piece
            prev = x
        inner[idx] = acc

    gamma_full = special.gamma(a + 1.0)
    with np.errstate(over="ignore"):
        upper = np.exp(u) * special.gammaincc(a + 1.0, u) * gamma_full
    big = ~np.isfinite(upper) | (u > 600.0)
    if np.any(big):
        upper = np.where(big, 0.0, upper)
        for i in np.flatnonzero(big):
            ui = u[i]
            upper[i] = integrate.quad(lambda y: math.exp(-y) * (ui + y) ** a, 0.0, np.inf)[0]
    r = 0.25 * (upper + gamma_full * np.exp(-u) + inner) - 0.5 * u**a
    return (sigma**2 * q ** (-a) * r).reshape(shape)


@dataclass(frozen=True)
class FouStationaryKernel:
    """Stationary OU process driven by fractional Brownian motion, ``H in (1/2, 1)``.

    ``H = 0.5`` is accepted internally as the Markov limit (used for table rows),
    but model validation rejects it; use :class:`OuStationaryKernel` instead.
    """

    q: float
    sigma: float
    H: float
    variant: ClassVar[str] = "fou_stationary"
    stationary: ClassVar[bool] = True

    def __post_init__(self) -> None:
        if self.q <= 0 or self.sigma <= 0:
            raise ValidationError("fOU kernel needs q > 0 and sigma > 0")
        if not 0.5 <= self.H < 1.0:
            raise ValidationError(f"Hurst parameter must lie in (0.5, 1), got {self.H}")

    def autocovariance(self, lag: ArrayLike) -> FloatArray:
        if self.H == 0.5:
            return OuStationaryKernel(self.q, self.sigma).autocovariance(lag)
        return fou_autocovariance(lag, self.q, self.sigma, self.H)

    @property
    def variance(self) -> float:
        return self.sigma**2 * self.H * special.gamma(2 * self.H) * self.q ** (-2 * self.H)

    def __call__(self, t: ArrayLike, s: ArrayLike) -> FloatArray:
        t, s = _pair(t, s)
        lag = np.abs(t - s)
        uniq, inv = np.unique(lag, return_inverse=True)
        return self.autocovariance(uniq)[inv].reshape(lag.shape)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "q": self.q, "sigma": self.sigma, "H": self.H}


@dataclass(frozen=True)
class TabulatedKernel:
    """Covariance sampled on a grid; evaluated by bilinear interpolation."""

    grid: tuple[float, ...]
    matrix: tuple[tuple[float, ...], ...]
    variant: ClassVar[str] = "tabulated"
    stationary: ClassVar[bool] = False
    _interp: Any = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=float)
        mat = np.asarray(self.matrix, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValidationError("tabulated kernel grid must be strictly increasing, length >= 2")
        if mat.shape != (g.size, g.size):
            raise ValidationError("tabulated kernel matrix must be square and match the grid")
        if not np.all(np.isfinite(mat)):
            raise ValidationError("tabulated kernel contains non-finite values")
        object.__setattr__(self, "_interp", RegularGridInterpolator((g, g), mat))

    @classmethod
    def from_arrays(cls, grid: ArrayLike, matrix: ArrayLike) -> TabulatedKernel:
        mat = np.asarray(matrix, dtype=float)
        return cls(tuple(map(float, np.asarray(grid, dtype=float))), tuple(map(tuple, mat.tolist())))

    def __call__(self, t: ArrayLike, s: ArrayLike) -> FloatArray:
        t, s = _pair(t, s)
        pts = np.stack([t.ravel(), s.ravel()], axis=-1)
        return self._interp(pts).reshape(t.shape)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "grid": list(self.grid), "matrix": [list(r) for r in self.matrix]}


CovarianceKernel = (
    BrownianMotionKernel
    | BrownianBridgeKernel
    | OuRandomStartKernel
    | OuDeterministicStartKernel
    | OuStationaryKernel
    | FouStationaryKernel
    | TabulatedKernel
)

_MEANS = {cls.variant: cls for cls in (ConstantMean, OuRelaxationMean, TabulatedMean)}
_KERNELS = {
    cls.variant: cls
    for cls in (
        BrownianMotionKernel,
        BrownianBridgeKernel,
        OuRandomStartKernel,
        OuDeterministicStartKernel,
        OuStationaryKernel,
        FouStationaryKernel,
        TabulatedKernel,
    )
}


def mean_from_dict(data: dict[str, Any]) -> MeanFunction:
    data = dict(data)
    try:
        cls = _MEANS[data.pop("variant")]
    except KeyError as exc:
        raise ValidationError(f"unknown or missing mean variant: {exc}") from None
    if cls is TabulatedMean:
        return TabulatedMean(tuple(data["grid"]), tuple(data["values"]))
    return cls(**data)


def kernel_from_dict(data: dict[str, Any], T: float | None = None) -> CovarianceKernel:
    data = dict(data)
    try:
        cls = _KERNELS[data.pop("variant")]
    except KeyError as exc:
        raise ValidationError(f"unknown or missing kernel variant: {exc}") from None
    if cls is TabulatedKernel:
        return TabulatedKernel.from_arrays(data["grid"], data["matrix"])
    if cls is BrownianBridgeKernel and "length" not in data:
        if T is None:
            raise ValidationError("brownian_bridge needs a length (defaults to the model horizon)")
        data["length"] = T
    return cls(**data)


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    mean: MeanFunction
    kernel: CovarianceKernel
    T: float
    r: float = 0.0
    s0: float = 1.0

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValidationError(f"maturity T must be positive, got {self.T}")
        if not self.s0 > 0:
            raise ValidationError(f"spot s0 must be positive, got {self.s0}")
        if isinstance(self.kernel, TabulatedKernel | BrownianBridgeKernel):
            lo, hi = _support(self.kernel)
            if lo > 0 or hi < self.T - 1e-12:
                raise ValidationError("kernel support does not cover [0, T]")
        if isinstance(self.mean, TabulatedMean):
            if self.mean.grid[0] > 0 or self.mean.grid[-1] < self.T - 1e-12:
                raise ValidationError("tabulated mean grid does not cover [0, T]")

    @property
    def forward(self) -> float:
        return self.s0 * math.exp(self.r * self.T)

    def validate(self, grid_points: int = 201) -> ModelSpec:
        """Check symmetry, positive diagonal, and positive semidefiniteness on a grid."""
        if isinstance(self.kernel, FouStationaryKernel) and not 0.5 < self.kernel.H < 1.0:
            raise ValidationError("fOU models require H in (0.5, 1)")
        if isinstance(self.kernel, OuStationaryKernel | FouStationaryKernel):
            if isinstance(self.mean, OuRelaxationMean) and self.mean.m0 != self.mean.m:
                raise ValidationError("a stationary kernel cannot pair with a relaxing mean (m0 != m)")
        if isinstance(self.mean, OuRelaxationMean) and isinstance(self.kernel, OuRandomStartKernel):
            if not math.isclose(self.mean.q, self.kernel.q):
                raise ValidationError("OU mean and kernel disagree on the mean-reversion rate q")

        t = np.linspace(0.0, self.T, grid_points)
        Q = self.kernel(t[:, None], t[None, :])
        if not np.all(np.isfinite(Q)):
            raise ValidationError("kernel produced non-finite values")
        scale = float(np.max(np.abs(Q))) or 1.0
        if np.max(np.abs(Q - Q.T)) > 1e-12 * scale:
            raise ValidationError("kernel is not symmetric")
        diag = np.diag(Q)[1:-1]
        if np.any(diag <= 0):
            raise ValidationError("kernel variance Q(s, s) must be positive for 0 < s < T")
        try:
            np.linalg.cholesky(Q + 1e-10 * scale * np.eye(grid_points))
        except np.linalg.LinAlgError:
            raise ValidationError("kernel is not positive semidefinite on the validation grid") from None
        m = self.mean(t)
        if not np.all(np.isfinite(m)):
            raise ValidationError("mean produced non-finite values")
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "T": self.T,
            "r": self.r,
            "s0": self.s0,
            "mean": self.mean.to_dict(),
            "kernel": self.kernel.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelSpec:
        try:
            T = float(data["T"])
            spec = cls(
                mean=mean_from_dict(data["mean"]),
                kernel=kernel_from_dict(data["kernel"], T),
                T=T,
                r=float(data.get("r", 0.0)),
                s0=float(data.get("s0", 1.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed model document: {exc!r}") from None
        return spec.validate()


def _support(kernel: TabulatedKernel | BrownianBridgeKernel) -> tuple[float, float]:
    if isinstance(kernel, TabulatedKernel):
        return kernel.grid[0], kernel.grid[-1]
    return 0.0, kernel.length


# ---------------------------------------------------------------------------
# Named models
# ---------------------------------------------------------------------------


def stein_stein(
    m: float,
    q: float,
    sigma: float,
    T: float,
    *,
    start: str = "stationary",
    m0: float | None = None,
    sigma0: float | None = None,
    r: float = 0.0,
    s0: float = 1.0,
) -> ModelSpec:
    """Uncorrelated Stein-Stein model with volatility ``|X|``, ``X`` an OU process.

    ``start`` is ``"stationary"`` (``X_0`` drawn from the stationary law),
    ``"deterministic"`` (``X_0 = m0``) or ``"random"`` (``X_0 ~ N(m0, sigma0^2)``).
    """
    if start == "stationary":
        return ModelSpec(ConstantMean(m), OuStationaryKernel(q, sigma), T, r, s0).validate()
    m0 = m if m0 is None else m0
    mean = ConstantMean(m) if m0 == m else OuRelaxationMean(m0, m, q)
    if start == "deterministic":
        kernel: CovarianceKernel = OuDeterministicStartKernel(q, sigma)
    elif start == "random":
        if sigma0 is None:
            raise ValidationError("random start needs sigma0")
        kernel = OuRandomStartKernel(q, sigma, sigma0)
    else:
        raise ValidationError(f"unknown start {start!r}")
    return ModelSpec(mean, kernel, T, r, s0).validate()


def fractional_ou(m: float, q: float, sigma: float, H: float, T: float, *, r: float = 0.0, s0: float = 1.0) -> ModelSpec:
    """Stationary fractional OU volatility with constant mean ``m``."""
    return ModelSpec(ConstantMean(m), FouStationaryKernel(q, sigma, H), T, r, s0).validate()


@dataclass(frozen=True)
class OuParameters:
    q: float
    sigma: float
    sigma0: float
    m: float
    m0: float
    stationary: bool


def ou_parameters(spec: ModelSpec) -> OuParameters | None:
    """Extract OU parameters when the model belongs to the (generalised) Stein-Stein family."""
    k = spec.kernel
    if isinstance(k, OuStationaryKernel):
        q, sigma, sigma0, stationary = k.q, k.sigma, k.sigma0, True
    elif isinstance(k, OuRandomStartKernel):
        q, sigma, sigma0, stationary = k.q, k.sigma, k.sigma0, False
    else:
        return None
    mean = spec.mean
    if isinstance(mean, ConstantMean):
        m = m0 = mean.level
    elif isinstance(mean, OuRelaxationMean) and math.isclose(mean.q, q):
        m, m0 = mean.m, mean.m0
    else:
        return None
    return OuParameters(q, sigma, sigma0, m, m0, stationary)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def evaluate_kernel(spec: ModelSpec, t: ArrayLike, s: ArrayLike) -> FloatArray:
    """Covariance ``Q(t, s)`` for times in ``[0, T]``."""
    t_arr, s_arr = _pair(t, s)
    tol = 1e-12 * spec.T
    if np.any(t_arr < -tol) or np.any(s_arr < -tol) or np.any(t_arr > spec.T + tol) or np.any(s_arr > spec.T + tol):
        raise DomainError(f"kernel evaluated outside [0, {spec.T}]")
    out = spec.kernel(np.clip(t_arr, 0.0, spec.T), np.clip(s_arr, 0.0, spec.T))
    return out if out.ndim else out[()]


def martingale_delta_bound(spec: ModelSpec) -> float:
    """Upper bound ``1 / (2 max_t Q(t, t))`` on the exponential-moment parameter.

    Any ``delta`` below this value satisfies ``sup_t E exp(delta X_t^2) < inf``,
    which makes the discounted price ``e^{-rt} S_t`` a true martingale.
    """
    t = np.linspace(0.0, spec.T, DIAGONAL_GRID_POINTS)
    diag = spec.kernel(t, t)
    if not np.all(np.isfinite(diag)):
        raise ValidationError("kernel variance is not finite on [0, T]")
    peak = float(np.max(diag))
    if peak <= 0:
        raise ValidationError("kernel variance vanishes identically on [0, T]")
    return 1.0 / (2.0 * peak)
