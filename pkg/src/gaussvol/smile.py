"""Implied-volatility wing expansions.

For a log-moneyness ``k = log(K / (s0 e^{rT}))`` far from the money, the
implied volatility of a Gaussian volatility model behaves as

    I(k) = L sqrt|k| + M + (1 - n_1)/4 * log|k| / sqrt|k| + O(|k|^{-1/2})

with the same coefficients in both wings, because the uncorrelated models are
symmetric under ``k -> -k``.  The general transfer from a power-law asset
density tail to the implied volatility is also provided, so the expansion can
be checked against its own derivation.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable
from dataclasses import asdict, dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .chaos import ChaosConstants
from .exceptions import DomainError, ValidationError

FloatArray = NDArray[np.float64]
Direction = Literal["large_strike", "small_strike"]
DIRECTIONS: tuple[str, ...] = ("large_strike", "small_strike")


class AsymptoticRegimeWarning(UserWarning):
    """Evaluation point lies outside the regime where the wing expansion is asymptotic."""


@dataclass(frozen=True)
class WingExpansion:
    """Coefficients of the three-term wing formula.

    ``N`` and ``P`` are optional empirical higher-order coefficients (of
    ``1/sqrt|k|`` and ``1/|k|``); they are never filled analytically.
    """

    L: float
    M: float
    loglog_coeff: float
    direction: str
    T: float
    lambda1: float
    n1: int
    delta: float
    B_tilde: float
    C_tilde: float
    N: float | None = None
    P: float | None = None

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}")

    def coefficients(self) -> tuple[float, float, float]:
        return self.L, self.M, self.loglog_coeff

    def to_dict(self) -> dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, object]) -> WingExpansion:
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})  # type: ignore[arg-type]


def wing_coefficients(B_tilde: float, C_tilde: float, T: float) -> tuple[float, float]:
    """``(L, M)`` from the mixing-density constants."""
    if T <= 0:
        raise DomainError("T must be positive")
    root = math.sqrt(8 * C_tilde + T)
    sq = math.sqrt(T)
    plus, minus = root + sq, root - sq
    # (sqrt(plus) - sqrt(minus)) written without cancellation
    diff = (plus - minus) / (math.sqrt(plus) + math.sqrt(minus))
    L = T ** (-0.75) * diff
    M = math.sqrt(2) * B_tilde / (sq * root**0.5) * (minus**-0.5 - plus**-0.5)
    return L, M


def wing_expansion(constants: ChaosConstants, T: float | None = None, direction: str = "large_strike") -> WingExpansion:
    """Wing expansion for either strike direction (identical coefficients)."""
    T = constants.T if T is None else float(T)
    if T <= 0:
        raise DomainError("T must be positive")
    B_tilde = math.sqrt(constants.delta * T / constants.lambda1)
    C_tilde = T / (2 * constants.lambda1)
    L, M = wing_coefficients(B_tilde, C_tilde, T)
    return WingExpansion(
        L=L, M=M, loglog_coeff=(1 - constants.n1) / 4, direction=direction, T=T,
        lambda1=constants.lambda1, n1=constants.n1, delta=constants.delta,
        B_tilde=B_tilde, C_tilde=C_tilde,
    )


def mirror(expansion: WingExpansion) -> WingExpansion:
    """The same expansion for the opposite wing."""
    other = "small_strike" if expansion.direction == "large_strike" else "large_strike"
    return replace(expansion, direction=other)


def evaluate_wing(expansion: WingExpansion, k: ArrayLike) -> FloatArray:
    """``L sqrt|k| + M + loglog_coeff log|k| / sqrt|k|`` (plus optional empirical terms).

    Warns with :class:`AsymptoticRegimeWarning` when ``|k| < 1`` or when ``k`` lies
    on the wrong side for the expansion's direction.
    """
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr == 0) or not np.all(np.isfinite(k_arr)):
        raise DomainError("log-moneyness must be finite and non-zero")
    wrong_side = k_arr < 0 if expansion.direction == "large_strike" else k_arr > 0
    if np.any(wrong_side):
        warnings.warn("log-moneyness on the opposite side of the expansion's wing", AsymptoticRegimeWarning, stacklevel=2)
    if np.any(np.abs(k_arr) < 1):
        warnings.warn("|k| < 1 is outside the asymptotic regime", AsymptoticRegimeWarning, stacklevel=2)
    a = np.abs(k_arr)
    root = np.sqrt(a)
    out = expansion.L * root + expansion.M
    if expansion.loglog_coeff:
        out = out + expansion.loglog_coeff * np.log(a) / root
    if expansion.N is not None:
        out = out + expansion.N / root
    if expansion.P is not None:
        out = out + expansion.P / a
    return out if out.ndim else float(out)


def corollary_coefficients(lambda1: float, delta1: float, T: float) -> tuple[float, float]:
    """``(L, M)`` in closed form for a simple top eigenvalue.

    ``M`` uses ``|delta1|`` since the sign of ``e_1`` is a convention.
    """
    if lambda1 <= 0:
        raise DomainError("lambda1 must be positive")
    if T <= 0:
        raise DomainError("T must be positive")
    a = math.sqrt(4 + lambda1) + math.sqrt(lambda1)
    b = math.sqrt(4 + lambda1) - math.sqrt(lambda1)
    denom = math.sqrt(T) * (math.sqrt(a) + math.sqrt(b))
    L = 2 * lambda1**0.25 / denom
    M = math.sqrt(2) * abs(delta1) / ((4 + lambda1) ** 0.25 * denom)
    return L, M


# ---------------------------------------------------------------------------
# Density-tail transfer
# ---------------------------------------------------------------------------


LogH = float | ArrayLike | Callable[[FloatArray], FloatArray]


def folal_transfer_logm(alpha: float, log_h: LogH, k: ArrayLike, T: float) -> FloatArray:
    """Implied volatility from an asset density tail ``x^alpha h(x)``, in log-moneyness.

    With ``Lam = -(alpha + 2) k - log h`` and ``Lam' = Lam - log(Lam) / 2``,
    ``I(k) = sqrt(2/T) (sqrt(k + Lam') - sqrt(Lam'))``, evaluated as
    ``sqrt(2/T) k / (sqrt(k + Lam') + sqrt(Lam'))`` to avoid cancellation.
    ``log_h`` is a value (array) at ``k`` or a callable of ``k``.
    """
    if alpha >= -2:
        raise DomainError("tail exponent alpha must be < -2")
    if T <= 0:
        raise DomainError("T must be positive")
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr <= 0):
        raise DomainError("strike must exceed the forward")
    lh = log_h(k_arr) if callable(log_h) else np.asarray(log_h, dtype=float)
    lam = -(alpha + 2) * k_arr - lh
    if np.any(lam <= 1):
        raise DomainError("strike too close to the forward for the tail transfer")
    lam_p = lam - 0.5 * np.log(lam)
    out = math.sqrt(2 / T) * k_arr / (np.sqrt(k_arr + lam_p) + np.sqrt(lam_p))
    return out if out.ndim else float(out)


def folal_transfer(alpha: float, log_h: LogH, K: ArrayLike, T: float, s0: float = 1.0, r: float = 0.0) -> FloatArray:
    """Implied volatility at strike ``K`` from the density tail ``x^alpha h(x)``."""
    K_arr = np.asarray(K, dtype=float)
    if np.any(K_arr <= 0):
        raise DomainError("strike must be positive")
    k = np.log(K_arr / (s0 * math.exp(r * T)))
    return folal_transfer_logm(alpha, log_h, k, T)


def density_tail_inputs(constants: ChaosConstants, T: float | None = None) -> tuple[float, Callable[[FloatArray], FloatArray]]:
    """Tail exponent ``alpha`` and ``log h`` of the asset density implied by the mixing density."""
    T = constants.T if T is None else float(T)
    B_tilde = math.sqrt(constants.delta * T / constants.lambda1)
    C_tilde = T / (2 * constants.lambda1)
    root = math.sqrt(8 * C_tilde + T)
    alpha = -(1.5 + root / (2 * math.sqrt(T)))
    slope = B_tilde * math.sqrt(2) / (T**0.25 * root**0.5)
    power = (constants.n1 - 3) / 4

    def log_h(k: FloatArray) -> FloatArray:
        k = np.asarray(k, dtype=float)
        return power * np.log(k) + slope * np.sqrt(k)

    return alpha, log_h


def fit_transfer_coefficients(
    constants: ChaosConstants,
    k_range: tuple[float, float] = (1e4, 1e6),
    points: int = 200,
    T: float | None = None,
) -> tuple[float, float]:
    """Least-squares ``(L, M)`` of the tail transfer on a log-spaced ``k`` grid.

    The basis is ``sqrt(k)``, ``1``, ``1/sqrt(k)`` and, when ``n_1 > 1``,
    ``log(k)/sqrt(k)``.
    """
    alpha, log_h = density_tail_inputs(constants, T)
    T = constants.T if T is None else float(T)
    k = np.geomspace(*k_range, points)
    iv = folal_transfer_logm(alpha, log_h, k, T)
    cols = [np.sqrt(k), np.ones_like(k), 1 / np.sqrt(k)]
    if constants.n1 > 1:
        cols.append(np.log(k) / np.sqrt(k))
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), iv, rcond=None)
    return float(coef[0]), float(coef[1])
