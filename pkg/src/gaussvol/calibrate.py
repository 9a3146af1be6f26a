"""Wing calibration: fit ``(L, M)`` on a small-strike window and map back to model parameters.

The chain is

    fit_wing -> invert_wing -> recover_sigma (Stein-Stein) or recover_hurst (fOU)

``invert_wing`` is the exact algebraic inverse of
:func:`gaussvol.smile.corollary_coefficients`; ``lambda_1`` depends on ``L``
alone.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from ._rng import map_batches
from .blackscholes import bs_implied_vol
from .exceptions import (
    CalibrationError,
    DomainError,
    GaussvolError,
    InsufficientDataError,
    ValidationError,
)
from .model import FouStationaryKernel
from .pricing import PricedPoint
from .smile import WingExpansion
from .spectrum import DEFAULT_GRIDS, nystrom_spectrum, ou_frequencies
from .model import ConstantMean

DEFAULT_WINDOW_LENGTH = 0.15
REGIME_EDGE = -0.7
HURST_GRID = tuple(round(0.50 + 0.01 * i, 2) for i in range(50))
OUT_OF_RANGE = 0.20
MIN_POINTS = 4


class CalibrationWarning(UserWarning):
    """Calibration result is usable but suspect (regime, range, degeneracy)."""


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IvSlice:
    """Implied volatilities at one maturity, indexed by log-moneyness ``k = log(K/s0) - rT``."""

    T: float
    k: tuple[float, ...]
    iv: tuple[float, ...]
    s0: float = 1.0
    r: float = 0.0
    source: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.T <= 0 or self.s0 <= 0:
            raise ValidationError("slice needs T > 0 and s0 > 0")
        if len(self.k) != len(self.iv):
            raise ValidationError("k and iv must have the same length")
        if len(set(self.k)) != len(self.k):
            raise ValidationError("log-moneyness values must be distinct")
        if any(not (v > 0 and math.isfinite(v)) for v in self.iv):
            raise ValidationError("implied volatilities must be positive and finite")

    @classmethod
    def from_arrays(cls, T: float, k: ArrayLike, iv: ArrayLike, s0: float = 1.0, r: float = 0.0, **source: Any) -> IvSlice:
        return cls(T, tuple(map(float, np.asarray(k))), tuple(map(float, np.asarray(iv))), s0, r, dict(source))

    @classmethod
    def from_points(cls, points: Iterable[PricedPoint], T: float, s0: float = 1.0, r: float = 0.0, **source: Any) -> IvSlice:
        """Keep the points with a defined implied volatility."""
        pts = [p for p in points if p.iv is not None]
        return cls.from_arrays(T, [p.k for p in pts], [p.iv for p in pts], s0, r, **source)

    @classmethod
    def from_prices(cls, T: float, strikes: ArrayLike, prices: ArrayLike, s0: float = 1.0, r: float = 0.0, **source: Any) -> IvSlice:
        """Convert call prices to implied volatilities; unpriceable strikes are dropped."""
        k_out, iv_out = [], []
        for K, p in zip(np.asarray(strikes, float), np.asarray(prices, float)):
            try:
                iv_out.append(bs_implied_vol(float(p), s0, float(K), T, r))
            except GaussvolError:
                continue
            k_out.append(math.log(K / s0) - r * T)
        return cls.from_arrays(T, k_out, iv_out, s0, r, **source)

    @classmethod
    def from_csv(cls, text: str, T: float, s0: float = 1.0, r: float = 0.0) -> IvSlice:
        """Parse CSV with header ``k,iv`` or ``strike,price`` (detected from the header)."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ValidationError("empty slice file")
        header = [h.strip().lower() for h in rows[0]]
        try:
            body = [[float(x) for x in row] for row in rows[1:] if row and any(c.strip() for c in row)]
        except ValueError as exc:
            raise ValidationError(f"non-numeric slice entry: {exc}") from None
        cols = {name: i for i, name in enumerate(header)}
        if {"k", "iv"} <= cols.keys():
            return cls.from_arrays(T, [r[cols["k"]] for r in body], [r[cols["iv"]] for r in body], s0, r, format="k,iv")
        if {"strike", "price"} <= cols.keys():
            return cls.from_prices(
                T, [r[cols["strike"]] for r in body], [r[cols["price"]] for r in body], s0, r, format="strike,price"
            )
        raise ValidationError("slice header must be 'k,iv' or 'strike,price'")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "iv"])
        for k, v in zip(self.k, self.iv):
            w.writerow([repr(k), repr(v)])
        return buf.getvalue()

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.k), np.asarray(self.iv)


@dataclass(frozen=True)
class FitWindow:
    k_lo: float
    k_hi: float

    def __post_init__(self) -> None:
        if not self.k_lo < self.k_hi < 0:
            raise ValidationError("window must satisfy k_lo < k_hi < 0 (small-strike wing)")

    @classmethod
    def ending_at(cls, k_hi: float, length: float = DEFAULT_WINDOW_LENGTH) -> FitWindow:
        return cls(k_hi - length, k_hi)

    @classmethod
    def parse(cls, text: str) -> FitWindow:
        try:
            lo, hi = (float(x) for x in text.split(":"))
        except ValueError:
            raise ValidationError(f"window must look like '-0.85:-0.70', got {text!r}") from None
        return cls(lo, hi)

    def contains(self, k: np.ndarray) -> np.ndarray:
        # a small slack keeps grid points that sit on the window edges
        eps = 1e-9
        return (k >= self.k_lo - eps) & (k <= self.k_hi + eps)


@dataclass(frozen=True)
class WingFit:
    L: float
    M: float
    residual: float
    n_points: int


@dataclass(frozen=True)
class HurstTable:
    """``lambda_1`` of the stationary fOU kernel per Hurst index at fixed ``(T, q, sigma)``."""

    T: float
    q: float
    sigma: float
    H: tuple[float, ...]
    lambda1: tuple[float, ...]
    grid_sizes: tuple[int, ...] = DEFAULT_GRIDS

    def __post_init__(self) -> None:
        if not self.H or len(self.H) != len(self.lambda1):
            raise ValidationError("table needs matching, non-empty H and lambda1 rows")

    def is_decreasing(self) -> bool:
        order = np.argsort(self.H)
        lam = np.asarray(self.lambda1)[order]
        return bool(np.all(np.diff(lam) < 0))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["H"], d["lambda1"], d["grid_sizes"] = list(self.H), list(self.lambda1), list(self.grid_sizes)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> HurstTable:
        try:
            return cls(
                float(data["T"]), float(data["q"]), float(data["sigma"]),
                tuple(map(float, data["H"])), tuple(map(float, data["lambda1"])),
                tuple(map(int, data.get("grid_sizes", DEFAULT_GRIDS))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed Hurst table: {exc!r}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> HurstTable:
        return cls.from_dict(json.loads(Path(path).read_text()))


def bundled_hurst_table() -> HurstTable:
    """Precomputed table for ``T = 1/12, q = 7, sigma = 1.2`` on grids (512, 1024)."""
    text = resources.files("gaussvol.data").joinpath("hurst_table.json").read_text()
    return HurstTable.from_dict(json.loads(text))


@dataclass(frozen=True)
class SteinSteinMode:
    """Recover ``sigma`` with ``q`` known; ``start`` is ``stationary`` or ``deterministic``."""

    q: float
    start: str = "stationary"
    name: str = field(default="stein_stein", init=False)


@dataclass(frozen=True)
class FouMode:
    """Recover ``H`` with ``q`` and ``sigma`` known, using ``table`` (built on demand if absent)."""

    q: float
    sigma: float
    table: HurstTable | None = None
    name: str = field(default="fou", init=False)


@dataclass(frozen=True)
class CalibrationReport:
    L: float
    M: float
    residual: float
    n_points: int
    lambda1: float
    delta1: float
    parameter: str
    value: float
    mode: dict[str, Any]
    window: tuple[float, float]
    warnings: tuple[str, ...]
    bias_k: tuple[float, ...]
    bias: tuple[float, ...]
    bias_reference: str

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for key in ("window", "warnings", "bias_k", "bias"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CalibrationReport:
        d = dict(data)
        for key in ("window", "warnings", "bias_k", "bias"):
            d[key] = tuple(d[key])
        return cls(**d)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def fit_wing(slice_: IvSlice, window: FitWindow) -> WingFit:
    """Ordinary least squares of ``iv`` on ``{sqrt(-k), 1}`` over the window points."""
    k, iv = slice_.arrays()
    sel = window.contains(k)
    if int(sel.sum()) < MIN_POINTS:
        raise InsufficientDataError(f"{int(sel.sum())} points in window, need at least {MIN_POINTS}")
    ks, ys = k[sel], iv[sel]
    basis = np.column_stack([np.sqrt(-ks), np.ones_like(ks)])
    coef, *_ = np.linalg.lstsq(basis, ys, rcond=None)
    L, M = float(coef[0]), float(coef[1])
    rms = float(np.sqrt(np.mean((basis @ coef - ys) ** 2)))
    if L <= 0:
        warnings.warn("fitted L is not positive; the window does not look like a wing", CalibrationWarning, stacklevel=2)
    return WingFit(L, M, rms, int(sel.sum()))


def invert_wing(L: float, M: float, T: float) -> tuple[float, float]:
    """``lambda_1 = 64x/(4-x)^2`` and ``delta_1 = 4 sqrt(2T) M sqrt(4+x)/(4-x)`` with ``x = T^2 L^4``."""
    if T <= 0:
        raise DomainError("T must be positive")
    x = T * T * L**4
    if not 0 < x < 4:
        raise DomainError(f"T^2 L^4 = {x:.6g} outside (0, 4): no Gaussian model matches this wing")
    lam = 64 * x / (4 - x) ** 2
    delta1 = 4 * math.sqrt(2 * T) * M * math.sqrt(4 + x) / (4 - x)
    return lam, delta1


def recover_sigma(lambda1: float, q: float, T: float, sigma0_mode: str = "stationary") -> float:
    """``sigma = sqrt(lambda_1 (w_1^2 + q^2))`` with ``w_1`` from the sigma-free frequency equation.

    Stationary start: ``2 q w cos(wT) + (q^2 - w^2) sin(wT) = 0``.
    Deterministic start: ``w cos(wT) + q sin(wT) = 0``.
    """
    if lambda1 <= 0 or q <= 0 or T <= 0:
        raise DomainError("need lambda1, q, T > 0")
    if sigma0_mode == "stationary":
        roots = ou_frequencies(q, 1.0, 1.0 / math.sqrt(2 * q), T, 1)
    elif sigma0_mode == "deterministic":
        roots = ou_frequencies(q, 1.0, 0.0, T, 1)
    else:
        raise ValidationError("sigma0_mode must be 'stationary' or 'deterministic'")
    w1 = float(roots.w[0])
    return math.sqrt(lambda1 * (w1 * w1 + q * q))


def _fou_lambda1(H: float, q: float, sigma: float, T: float, grid_sizes: Sequence[int]) -> float:
    spec = nystrom_spectrum(FouStationaryKernel(q, sigma, H), ConstantMean(0.0), T, grid_sizes, count=3)
    return spec.lambda1


def build_hurst_table(
    q: float,
    sigma: float,
    T: float,
    H_grid: Sequence[float] = HURST_GRID,
    grid_sizes: Sequence[int] = DEFAULT_GRIDS,
    threads: int | None = None,
) -> HurstTable:
    """Nystrom + Richardson ``lambda_1`` per ``H``; raises if the result is not decreasing in ``H``."""
    H = tuple(float(h) for h in H_grid)
    if any(not 0.5 <= h < 1.0 for h in H):
        raise ValidationError("H grid must lie in [0.5, 1)")
    lam = map_batches(lambda i: _fou_lambda1(H[i], q, sigma, T, grid_sizes), len(H), threads)
    table = HurstTable(T, q, sigma, H, tuple(lam), tuple(grid_sizes))
    if not table.is_decreasing():
        raise ValidationError("lambda_1 is not strictly decreasing in H")
    return table


def recover_hurst(lambda1: float, table: HurstTable) -> float:
    """``H`` of the row nearest to ``lambda1``; ties go to the smaller ``H``.

    Warns when ``lambda1`` lies more than 20% outside the table's range.
    """
    lo, hi = min(table.lambda1), max(table.lambda1)
    if lambda1 < lo * (1 - OUT_OF_RANGE) or lambda1 > hi * (1 + OUT_OF_RANGE):
        warnings.warn(
            f"lambda1 = {lambda1:.5g} is outside the table range [{lo:.5g}, {hi:.5g}] by more than 20%",
            CalibrationWarning,
            stacklevel=2,
        )
    best_h, best_d = math.inf, math.inf
    for h, lam in sorted(zip(table.H, table.lambda1)):
        d = abs(lambda1 - lam)
        if d < best_d:
            best_h, best_d = h, d
    return best_h


def auto_window(slice_: IvSlice, length: float = DEFAULT_WINDOW_LENGTH, tolerance: float = 1.0) -> FitWindow:
    """Leftmost window of the given length free of convexity in ``iv`` against ``sqrt(-k)``.

    A window is flagged convex when any second divided difference of ``iv``
    with respect to ``u = sqrt(-k)`` exceeds ``tolerance``.
    """
    k, iv = slice_.arrays()
    order = np.argsort(k)
    k, iv = k[order], iv[order]
    for start in k[k < -length]:
        window = FitWindow(float(start), float(start + length))
        sel = window.contains(k)
        if sel.sum() < MIN_POINTS:
            continue
        u, y = np.sqrt(-k[sel])[::-1], iv[sel][::-1]
        d1 = np.diff(y) / np.diff(u)
        d2 = 2 * np.diff(d1) / (u[2:] - u[:-2])
        if np.all(d2 <= tolerance):
            return window
    raise CalibrationError("window", "no convexity-free window found in the small-strike wing")


def bias_diagnostic(slice_: IvSlice, window: FitWindow, L: float, M: float) -> tuple[np.ndarray, np.ndarray]:
    """``[I(k) - (L sqrt(-k) + M)] sqrt(-k)`` at the window points."""
    k, iv = slice_.arrays()
    sel = window.contains(k)
    ks = k[sel]
    return ks, (iv[sel] - (L * np.sqrt(-ks) + M)) * np.sqrt(-ks)


def calibrate_end_to_end(
    slice_: IvSlice,
    window: FitWindow | None,
    mode: SteinSteinMode | FouMode,
    *,
    reference: WingExpansion | None = None,
) -> CalibrationReport:
    """Run the full chain; failures are re-raised as :class:`CalibrationError` with a stage label.

    The bias diagnostic uses ``reference`` (e.g. the true model's expansion)
    when given, otherwise the fitted coefficients.
    """
    notes: list[str] = []
    try:
        window = auto_window(slice_) if window is None else window
    except CalibrationError:
        raise
    except GaussvolError as exc:
        raise CalibrationError("window", str(exc)) from exc
    if window.k_hi > REGIME_EDGE:
        notes.append(f"window upper edge {window.k_hi} lies above {REGIME_EDGE}: outside the asymptotic regime")

    def stage(name: str, fn, *args):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                out = fn(*args)
            except GaussvolError as exc:
                raise CalibrationError(name, str(exc)) from exc
        notes.extend(f"[{name}] {w.message}" for w in caught)
        return out

    fit = stage("fit", fit_wing, slice_, window)
    lam1, delta1 = stage("invert", invert_wing, fit.L, fit.M, slice_.T)
    if isinstance(mode, SteinSteinMode):
        value = stage("recover", recover_sigma, lam1, mode.q, slice_.T, mode.start)
        parameter = "sigma"
        mode_info = {"name": mode.name, "q": mode.q, "start": mode.start}
    elif isinstance(mode, FouMode):
        table = mode.table
        if table is None:
            table = stage("table", build_hurst_table, mode.q, mode.sigma, slice_.T)
        value = stage("recover", recover_hurst, lam1, table)
        parameter = "H"
        mode_info = {"name": mode.name, "q": mode.q, "sigma": mode.sigma}
    else:
        raise CalibrationError("recover", f"unknown calibration mode {mode!r}")

    if reference is not None:
        bk, bias = bias_diagnostic(slice_, window, reference.L, reference.M)
        ref = "model"
    else:
        bk, bias = bias_diagnostic(slice_, window, fit.L, fit.M)
        ref = "fit"
    return CalibrationReport(
        L=fit.L, M=fit.M, residual=fit.residual, n_points=fit.n_points,
        lambda1=lam1, delta1=delta1, parameter=parameter, value=float(value), mode=mode_info,
        window=(window.k_lo, window.k_hi), warnings=tuple(notes),
        bias_k=tuple(map(float, bk)), bias=tuple(map(float, bias)), bias_reference=ref,
    )
