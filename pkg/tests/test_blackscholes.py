from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from gaussvol.blackscholes import (
    bs_call,
    bs_implied_vol,
    bs_put,
    bs_vega,
    implied_total_vol,
    implied_vol_from_otm,
    normalised_otm,
)
from gaussvol.exceptions import DomainError, UndefinedIVError

mp.mp.dps = 40


def reference_otm(x: float, v: float) -> float:
    """Forward-normalised OTM price in 40-digit arithmetic."""
    x, v = mp.mpf(x), mp.mpf(v)
    d1 = -x / v + v / 2
    d2 = d1 - v
    if x >= 0:
        return float(mp.ncdf(d1) - mp.e**x * mp.ncdf(d2))
    return float(mp.e**x * mp.ncdf(-d2) - mp.ncdf(-d1))


class TestPrices:
    @pytest.mark.parametrize("x", [-4.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0, 6.0])
    @pytest.mark.parametrize("v", [0.02, 0.1, 0.3, 1.0, 3.0])
    def test_against_high_precision(self, x, v):
        ref = reference_otm(x, v)
        assert normalised_otm(x, v) == pytest.approx(ref, rel=1e-12, abs=1e-300)

    @given(x=st.floats(-5, 5), v=st.floats(0.01, 3))
    def test_wing_symmetry(self, x, v):
        assert normalised_otm(-x, v) == pytest.approx(math.exp(-x) * normalised_otm(x, v), rel=1e-12, abs=1e-300)

    def test_zero_vol_is_zero(self):
        assert normalised_otm(0.3, 0.0) == 0.0

    @given(K=st.floats(0.2, 5), sigma=st.floats(0.05, 1.5), T=st.floats(0.05, 3), r=st.floats(-0.02, 0.08))
    def test_put_call_parity(self, K, sigma, T, r):
        s0 = 1.3
        lhs = bs_call(s0, K, sigma, T, r) - bs_put(s0, K, sigma, T, r)
        assert lhs == pytest.approx(s0 - K * math.exp(-r * T), abs=1e-13)

    def test_vega_finite_difference(self):
        h = 1e-6
        fd = (bs_call(1.0, 1.1, 0.3 + h, 0.5) - bs_call(1.0, 1.1, 0.3 - h, 0.5)) / (2 * h)
        assert bs_vega(1.0, 1.1, 0.3, 0.5) == pytest.approx(fd, rel=1e-7)

    def test_rejects_bad_inputs(self):
        with pytest.raises(DomainError):
            bs_call(1.0, -1.0, 0.2, 1.0)
        with pytest.raises(DomainError):
            bs_call(1.0, 1.0, 0.2, 0.0)


class TestImpliedVol:
    @given(x=st.floats(-6, 6), v=st.floats(0.01, 4))
    def test_round_trip(self, x, v):
        price = normalised_otm(x, v)
        assume(price > 1e-250)
        assert implied_total_vol(x, price) == pytest.approx(v, rel=1e-8)

    @pytest.mark.parametrize("x,v", [(3.0, 0.087), (-4.0, 0.15), (8.0, 0.5), (0.0, 1e-4)])
    def test_hard_cases(self, x, v):
        assert implied_total_vol(x, normalised_otm(x, v)) == pytest.approx(v, rel=1e-10)

    @pytest.mark.parametrize("kind", ["call", "put"])
    def test_from_price(self, kind):
        s0, K, T, r, sigma = 100.0, 120.0, 0.5, 0.03, 0.27
        price = bs_call(s0, K, sigma, T, r) if kind == "call" else bs_put(s0, K, sigma, T, r)
        assert bs_implied_vol(price, s0, K, T, r, kind=kind) == pytest.approx(sigma, rel=1e-10)

    def test_from_otm_price(self):
        s0, T, r, sigma, k = 1.0, 0.25, 0.02, 0.4, -0.3
        F = s0 * math.exp(r * T)
        otm = math.exp(-r * T) * F * normalised_otm(k, sigma * math.sqrt(T))
        assert implied_vol_from_otm(otm, k, s0, T, r) == pytest.approx(sigma, rel=1e-10)

    @pytest.mark.parametrize("price", [0.0, -0.1, 1.0, 2.0])
    def test_undefined_outside_band(self, price):
        with pytest.raises(UndefinedIVError):
            implied_total_vol(0.2, price)

    def test_bad_kind(self):
        with pytest.raises(DomainError):
            bs_implied_vol(0.1, 1.0, 1.0, 1.0, kind="straddle")

    def test_returns_plain_float(self):
        assert type(implied_total_vol(0.0, 0.1)) is float
