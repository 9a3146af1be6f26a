"""Reference experiments: the lambda_1 table, sigma and H calibration, and the bias diagnostic.

Each experiment returns a JSON-ready dict holding the computed values, the
frozen targets from ``data/expectations.json`` and a ``pass`` flag.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from typing import Any

import numpy as np

from .calibrate import (
    FitWindow,
    FouMode,
    IvSlice,
    SteinSteinMode,
    build_hurst_table,
    bundled_hurst_table,
    calibrate_end_to_end,
)
from .chaos import chaos_constants
from .exceptions import ValidationError
from .model import ModelSpec, fractional_ou, stein_stein
from .pricing import SimConfig, simulate_euler
from .smile import wing_expansion
from .spectrum import model_spectrum

STRIKE_STEP = 0.01
HURST_CASES = ("0.51", "0.55", "0.60", "0.70", "0.80")
EXPERIMENTS = ("table", "sigma-1m", "sigma-3m", *(f"hurst-{h}" for h in HURST_CASES))


def expectations() -> dict[str, Any]:
    return json.loads(resources.files("gaussvol.data").joinpath("expectations.json").read_text())


def window_strikes(window: FitWindow, s0: float = 1.0, step: float = STRIKE_STEP) -> np.ndarray:
    """Strikes on a ``step`` log-moneyness grid spanning the window (zero rates)."""
    n = int(round((window.k_hi - window.k_lo) / step))
    return s0 * np.exp(window.k_lo + step * np.arange(n + 1))


def simulated_slice(spec: ModelSpec, window: FitWindow, config: SimConfig) -> IvSlice:
    run = simulate_euler(spec, window_strikes(window, spec.s0), config)
    return IvSlice.from_points(run.points, spec.T, spec.s0, spec.r, n_paths=config.n_paths, n_steps=config.n_steps, seed=config.seed)


def default_config(seed: int, n_paths: int = 1_000_000, n_steps: int = 1000, threads: int | None = None) -> SimConfig:
    """Euler paths with ``W`` integrated out conditionally on each volatility path."""
    return SimConfig(n_paths=n_paths, n_steps=n_steps, seed=seed, conditional=True, threads=threads)


def run_table(threads: int | None = None) -> dict[str, Any]:
    exp = expectations()["hurst_table"]
    table = build_hurst_table(exp["q"], exp["sigma"], exp["T"], exp["H"], threads=threads)
    err = np.abs(np.asarray(table.lambda1) - np.asarray(exp["lambda1"]))
    return {
        "experiment": "table",
        "table": table.to_dict(),
        "target": exp["lambda1"],
        "max_abs_error": float(err.max()),
        "tolerance": exp["abs_tol"],
        "pass": bool(err.max() <= exp["abs_tol"]),
    }


def run_sigma(name: str, config: SimConfig) -> dict[str, Any]:
    exp = expectations()["sigma_calibration"][name]
    spec = stein_stein(exp["m"], exp["q"], exp["sigma"], exp["T"])
    window = FitWindow(*exp["window"])
    slice_ = simulated_slice(spec, window, config)
    reference = wing_expansion(chaos_constants(model_spectrum(spec)), direction="small_strike")
    report = calibrate_end_to_end(slice_, window, SteinSteinMode(exp["q"]), reference=reference)
    lo, hi = exp["band"]
    out: dict[str, Any] = {
        "experiment": name,
        "report": report.to_dict(),
        "true_lambda1": reference.lambda1,
        "reference_L": reference.L,
        "reference_M": reference.M,
        "sigma": report.value,
        "target": exp["target"],
        "band": exp["band"],
        "pass": bool(lo <= report.value <= hi),
        "slice": {"k": list(slice_.k), "iv": list(slice_.iv)},
    }
    bias = expectations()["bias_diagnostic"]
    if bias["experiment"] == name:
        b_lo, b_hi = bias["band"]
        values = np.asarray(report.bias)
        out["bias"] = {
            "min": float(values.min()),
            "max": float(values.max()),
            "band": bias["band"],
            "observed": bias["observed"],
            "pass": bool(values.min() >= b_lo and values.max() <= b_hi),
        }
    return out


def run_hurst(case: str, config: SimConfig) -> dict[str, Any]:
    exp = expectations()["hurst_calibration"]
    target = exp["cases"][case]["target"]
    H = float(case)
    spec = fractional_ou(exp["m"], exp["q"], exp["sigma"], H, exp["T"])
    window = FitWindow(*exp["window"])
    slice_ = simulated_slice(spec, window, config)
    table = bundled_hurst_table()
    report = calibrate_end_to_end(slice_, window, FouMode(exp["q"], exp["sigma"], table))
    # H = 0.51 may legitimately come back as 0.50
    allowed = {target, 0.50} if case == "0.51" else {target}
    ok = any(math.isclose(report.value, a, abs_tol=exp["abs_tol"] + 1e-12) for a in allowed)
    return {
        "experiment": f"hurst-{case}",
        "report": report.to_dict(),
        "H": report.value,
        "lambda1": report.lambda1,
        "target": target,
        "measured_lambda1_target": exp["cases"][case]["measured_lambda1"],
        "tolerance": exp["abs_tol"],
        "pass": bool(ok),
    }


def run_experiment(name: str, seed: int = 42, *, n_paths: int = 1_000_000, n_steps: int = 1000, threads: int | None = None) -> dict[str, Any]:
    if name not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    if name == "table":
        return run_table(threads)
    config = default_config(seed, n_paths, n_steps, threads)
    if name.startswith("sigma"):
        return run_sigma(name, config)
    return run_hurst(name.removeprefix("hurst-"), config)

