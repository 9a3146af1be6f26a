"""Extreme-strike implied-volatility asymptotics for uncorrelated Gaussian volatility models."""

from __future__ import annotations

from .calibrate import (
    CalibrationReport,
    FitWindow,
    FouMode,
    HurstTable,
    IvSlice,
    SteinSteinMode,
    build_hurst_table,
    calibrate_end_to_end,
    fit_wing,
    invert_wing,
    recover_hurst,
    recover_sigma,
)
from .chaos import ChaosConstants, chaos_constants, sample_integrated_variance
from .exceptions import (
    CalibrationError,
    DomainError,
    EmbeddingError,
    GaussvolError,
    InsufficientDataError,
    NumericalError,
    UndefinedIVError,
    ValidationError,
)
from .model import ModelSpec, fractional_ou, stein_stein
from .pricing import SimConfig, price, price_calls_euler, price_calls_mixture
from .smile import WingExpansion, corollary_coefficients, evaluate_wing, wing_expansion
from .spectrum import Spectrum, model_spectrum, nystrom_spectrum, ou_spectrum

__version__ = "0.1.0"
