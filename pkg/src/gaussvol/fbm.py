"""Exact fractional Gaussian noise by circulant embedding.

The increment autocovariance is embedded in a circulant matrix of size
``M = 2^ceil(log2(2(n - 1)))``, diagonalised by the FFT.  One complex FFT
yields two independent paths (its real and imaginary parts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import fft

from ._rng import batch_generator, batch_sizes, map_batches
from .exceptions import EmbeddingError, ValidationError

FloatArray = NDArray[np.float64]

EIGEN_CLIP = 1e-10
FBM_BATCH = 4096


def fgn_autocovariance(H: float, lags: int, dt: float) -> FloatArray:
    """``gamma(j) = (|j+1|^{2H} + |j-1|^{2H} - 2|j|^{2H}) dt^{2H} / 2`` for ``j = 0..lags``."""
    j = np.arange(lags + 1, dtype=float)
    a = 2 * H
    return 0.5 * (np.abs(j + 1) ** a + np.abs(j - 1) ** a - 2 * j**a) * dt**a


def embedding_size(n_steps: int) -> int:
    return max(2, 1 << math.ceil(math.log2(max(2 * (n_steps - 1), 2))))


@dataclass(frozen=True)
class CirculantFgn:
    """Sampler of ``n_steps`` fGn increments over ``[0, T]``."""

    H: float
    n_steps: int
    T: float
    size: int = field(init=False)
    _scale: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0.5 <= self.H < 1.0:
            raise ValidationError(f"H must lie in [0.5, 1), got {self.H}")
        if self.n_steps < 1 or self.T <= 0:
            raise ValidationError("need n_steps >= 1 and T > 0")
        M = embedding_size(self.n_steps)
        gamma = fgn_autocovariance(self.H, M // 2, self.T / self.n_steps)
        row = np.concatenate([gamma, gamma[-2:0:-1]])
        eig = fft.fft(row).real
        floor = -EIGEN_CLIP * float(np.max(eig))
        if np.min(eig) < floor:
            raise EmbeddingError(f"circulant embedding has a negative eigenvalue {np.min(eig):.3e}")
        eig = np.clip(eig, 0.0, None)
        object.__setattr__(self, "size", M)
        object.__setattr__(self, "_scale", np.sqrt(eig / M))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def sample(self, rng: np.random.Generator, n_paths: int) -> FloatArray:
        """``(n_paths, n_steps)`` array of increments ``B^H_{t_{i+1}} - B^H_{t_i}``."""
        if self.H == 0.5:
            return rng.standard_normal((n_paths, self.n_steps)) * math.sqrt(self.dt)
        pairs = (n_paths + 1) // 2
        z = rng.standard_normal((pairs, self.size)) + 1j * rng.standard_normal((pairs, self.size))
        y = fft.fft(z * self._scale, axis=1)[:, : self.n_steps]
        out = np.empty((2 * pairs, self.n_steps))
        out[0::2] = y.real
        out[1::2] = y.imag
        return out[:n_paths]


def simulate_fbm_increments(
    H: float,
    n_steps: int,
    T: float,
    n_paths: int,
    seed: int,
    *,
    threads: int | None = None,
    batch_size: int = FBM_BATCH,
) -> FloatArray:
    """Exact-in-law fBm increments on the uniform grid of ``[0, T]``.

    Output depends on ``seed`` and ``batch_size`` only.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    gen = CirculantFgn(H, n_steps, T)
    sizes = batch_sizes(n_paths, batch_size)
    parts = map_batches(lambda i: gen.sample(batch_generator(seed, i, stream=1), sizes[i]), len(sizes), threads)
    return np.concatenate(parts)
