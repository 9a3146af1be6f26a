"""Black-Scholes prices and implied-volatility inversion.

Inversion works on the out-of-the-money side (puts below the forward, calls
above) in forward-normalised units, which keeps deep-wing prices accurate.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import erfcx, ndtr

from .exceptions import DomainError, UndefinedIVError

FloatArray = NDArray[np.float64]

_SQRT_2PI = math.sqrt(2 * math.pi)
_SQRT_PI_2 = math.sqrt(math.pi / 2)
_SQRT2 = math.sqrt(2)


def _phi(x: ArrayLike) -> FloatArray:
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def normalised_otm(x: ArrayLike, v: ArrayLike) -> FloatArray:
    """Forward-normalised OTM price for log-moneyness ``x`` and total vol ``v = sigma sqrt(T)``.

    Call for ``x >= 0`` and put for ``x < 0``; symmetric in the sense
    ``otm(-x, v) = e^{-x} otm(x, v)``.
    """
    x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
    out = np.zeros(x.shape)
    pos = v > 0
    ax, vv = np.abs(x[pos]), v[pos]
    # the OTM put at -|x| is e^{-|x|} times the OTM call at |x|
    d1 = -ax / vv + 0.5 * vv
    d2 = d1 - vv
    near = ndtr(d1) - np.exp(ax) * ndtr(d2)
    # Mills-ratio form N(d1) - e^x N(d2) = phi(d1) [R(-d1) - R(-d2)] avoids cancellation
    mills = _phi(d1) * _SQRT_PI_2 * (erfcx(-d1 / _SQRT2) - erfcx(-d2 / _SQRT2))
    call = np.where(d1 < -1.0, mills, near)
    out[pos] = np.maximum(np.where(x[pos] >= 0, call, np.exp(x[pos]) * call), 0.0)
    return out if out.ndim else float(out)


def _forward(s0: float, T: float, r: float) -> float:
    return s0 * math.exp(r * T)


def bs_call(s0: float, K: ArrayLike, sigma: ArrayLike, T: float, r: float = 0.0) -> FloatArray:
    """European call price; ``sigma = 0`` gives the discounted intrinsic value."""
    if s0 <= 0 or T <= 0:
        raise DomainError("need s0 > 0 and T > 0")
    K = np.asarray(K, dtype=float)
    if np.any(K <= 0):
        raise DomainError("strikes must be positive")
    F = _forward(s0, T, r)
    x = np.log(K / F)
    otm = normalised_otm(x, np.asarray(sigma, dtype=float) * math.sqrt(T))
    intrinsic = np.maximum(1.0 - np.exp(x), 0.0)
    out = math.exp(-r * T) * F * (otm + intrinsic)
    return out if np.ndim(out) else float(out)


def bs_put(s0: float, K: ArrayLike, sigma: ArrayLike, T: float, r: float = 0.0) -> FloatArray:
    K = np.asarray(K, dtype=float)
    return bs_call(s0, K, sigma, T, r) - s0 + K * math.exp(-r * T)


def bs_vega(s0: float, K: ArrayLike, sigma: ArrayLike, T: float, r: float = 0.0) -> FloatArray:
    F = _forward(s0, T, r)
    v = np.asarray(sigma, dtype=float) * math.sqrt(T)
    d1 = -np.log(np.asarray(K, dtype=float) / F) / v + 0.5 * v
    return math.exp(-r * T) * F * _phi(d1) * math.sqrt(T)


def _initial_guess(x: float, c: float) -> float:
    """Corrado-Miller total-vol guess from the normalised call price ``c``."""
    k = math.exp(x)
    half = c - (1 - k) / 2
    disc = half * half - (1 - k) ** 2 / math.pi
    if disc > 0:
        v = _SQRT_2PI / (1 + k) * (half + math.sqrt(disc))
        if v > 0 and math.isfinite(v):
            return v
    return max(math.sqrt(2 * abs(x)), 0.1)


def implied_total_vol(x: float, otm: float, *, tol: float = 1e-14, max_iter: int = 200) -> float:
    """Total vol ``v`` with ``normalised_otm(x, v) = otm`` by safeguarded Newton.

    Newton runs on the log-price, which is close to linear in the deep wings.
    A bracket is kept throughout; a step leaving it, or one that fails to halve
    it, is replaced by bisection.
    """
    upper = 1.0 if x >= 0 else math.exp(x)
    if not (0.0 < otm < upper):
        raise UndefinedIVError(f"normalised OTM price {otm!r} outside (0, {upper!r})")
    c_call = otm + max(1 - math.exp(x), 0.0)
    lo, hi = 0.0, 1.0
    while normalised_otm(x, hi) < otm:
        lo, hi = hi, 2 * hi
        if hi > 1e4:
            raise UndefinedIVError("no finite volatility reproduces the price")
    v = _initial_guess(x, c_call)
    if not lo < v < hi:
        v = 0.5 * (lo + hi)
    target = math.log(otm)
    for _ in range(max_iter):
        price = normalised_otm(x, v)
        if price <= 0:
            lo = v
            v = 0.5 * (lo + hi)
            continue
        f = math.log(price) - target
        if abs(price - otm) <= tol * otm or hi - lo <= 4e-16 * v:
            return float(v)
        width = hi - lo
        if f > 0:
            hi = v
        else:
            lo = v
        vega = float(_phi(-x / v + 0.5 * v))
        step = v - f * price / vega if vega > 0 else math.nan
        if lo < step < hi and abs(step - v) < 0.5 * width:
            v = step
        else:
            v = 0.5 * (lo + hi)
    return float(v)


def bs_implied_vol(price: float, s0: float, K: float, T: float, r: float = 0.0, *, kind: str = "call") -> float:
    """Black-Scholes implied volatility of a call (or put) price.

    Raises :class:`UndefinedIVError` outside the no-arbitrage band.
    """
    if s0 <= 0 or K <= 0 or T <= 0:
        raise DomainError("need s0, K, T > 0")
    F = _forward(s0, T, r)
    disc = math.exp(-r * T)
    x = math.log(K / F)
    norm = price / (disc * F)
    if kind == "call":
        otm = norm - max(1 - math.exp(x), 0.0)
    elif kind == "put":
        otm = norm - max(math.exp(x) - 1, 0.0)
    else:
        raise DomainError("kind must be 'call' or 'put'")
    return implied_total_vol(x, otm) / math.sqrt(T)


def implied_vol_from_otm(otm_price: float, k: float, s0: float, T: float, r: float = 0.0) -> float:
    """Implied volatility from an undiscounted-forward OTM price at log-moneyness ``k``."""
    F = _forward(s0, T, r)
    return implied_total_vol(k, otm_price / (math.exp(-r * T) * F)) / math.sqrt(T)
