"""Exception hierarchy shared by all gaussvol modules."""

from __future__ import annotations


class GaussvolError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GaussvolError, ValueError):
    """Invalid model, spectrum, or input data."""


class DomainError(GaussvolError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(GaussvolError, RuntimeError):
    """A numerical procedure failed (no root, no convergence, ...)."""


class EmbeddingError(NumericalError):
    """Circulant embedding produced a materially negative eigenvalue."""


class UndefinedIVError(DomainError):
    """Option price outside the no-arbitrage band; no implied volatility exists."""


class InsufficientDataError(ValidationError):
    """Too few observations to perform a fit."""


class CalibrationError(GaussvolError):
    """A stage of the calibration chain failed.

    The failing stage is kept in ``stage`` and the original exception is chained.
    """

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
