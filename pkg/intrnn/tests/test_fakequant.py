"""This module tests the exact-rational helpers of the fake-quantization oracle."""
from fractions import Fraction

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from intrnn import fakequant
from intrnn.pwl import build_pwl, eval_pwl_int, output_qparams
from intrnn.quant_core import (RescaleConstant, compute_qparams, fixed_multiplier_from_real,
                               requantize_sum)


class TestExactValues:
    def test_exact_keeps_floats(self):
        values = fakequant.exact([0.1, 3, Fraction(1, 3)])
        assert values[0] == Fraction(0.1)
        assert values[1] == 3
        assert values[2] == Fraction(1, 3)

    def test_round_half_away(self):
        values = fakequant.exact([Fraction(5, 2), Fraction(-5, 2), Fraction(7, 3)])
        assert list(fakequant.round_exact(values)) == [3, -3, 2]

    def test_dequantize_exact(self):
        qp = compute_qparams(-1.0, 1.0)
        real = fakequant.dequantize_exact(np.array([128, 255]), qp)
        assert real[0] == 0
        assert real[1] == 127 * Fraction(qp.scale)


class TestEffectiveScale:
    """The oracle re-quantizes with the constants the integer path applies."""

    def test_identity(self):
        """real * rho equals the accumulator times the represented constant."""
        rescale = RescaleConstant.from_real(0.3)
        rho = fakequant.effective_inverse_scale(0.02, rescale)
        assert Fraction(7) * Fraction(0.02) * rho == 7 * rescale.represented

    def test_bare_multiplier_with_pre_shift(self):
        m = fixed_multiplier_from_real(0.75)
        rho = fakequant.effective_inverse_scale(1, m, pre_shift=2)
        assert rho == m.represented * 4

    @settings(max_examples=50)
    @given(st.integers(-(1 << 20), 1 << 20), st.floats(1e-3, 10.0))
    def test_matches_requantize(self, acc, ratio):
        """Quantizing acc * S_in with rho agrees with the integer requantization."""
        in_scale = 0.01
        rescale = RescaleConstant.from_real(ratio)
        rho = fakequant.effective_inverse_scale(in_scale, rescale)
        expected = rescale.requantize(np.array([acc]), 32768, 16)
        real = fakequant.exact([acc]) * Fraction(in_scale)
        assert list(fakequant.fake_quantize(real, rho, 32768, 16)) == list(expected)


class TestFakeRequantizeSum:
    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(-5000, 5000), st.floats(1e-3, 4.0)),
                    min_size=1, max_size=3))
    def test_matches_integer_sum(self, terms):
        """One rounding of the exact sum, same as requantize_sum."""
        rescaled = [(np.array([value]), RescaleConstant.from_real(r)) for value, r in terms]
        real_terms = [(fakequant.exact(values) * Fraction(1, 8),
                       fakequant.effective_inverse_scale(Fraction(1, 8), rescale))
                      for values, rescale in rescaled]
        expected = requantize_sum(rescaled, 128, 8)
        assert list(fakequant.fake_requantize_sum(real_terms, 128, 8)) == list(expected)

    def test_saturates(self):
        out = fakequant.fake_requantize_sum([(fakequant.exact([1000, -1000]), 1)], 0, 8)
        assert list(out) == [255, 0]


class TestFakePwl:
    """fake_pwl is the rational twin of eval_pwl_int."""

    def test_matches_integer_form(self):
        in_qp = compute_qparams(-6.0, 6.0)
        for function in ("tanh", "sigmoid", "exp"):
            for pieces in (3, 16, 64):
                if function == "exp":
                    table = build_pwl(function, compute_qparams(-8.0, 0.0), output_qparams("exp"),
                                      pieces)
                else:
                    table = build_pwl(function, in_qp, output_qparams(function), pieces)
                grid = table.in_qp.grid()
                assert np.array_equal(fakequant.fake_pwl(grid, table), eval_pwl_int(grid, table))

    def test_sixteen_bit_input(self):
        in_qp = compute_qparams(-8.0, 8.0, 16)
        table = build_pwl("tanh", in_qp, output_qparams("tanh"), 32)
        grid = np.arange(0, in_qp.qmax + 1, 97)
        assert np.array_equal(fakequant.fake_pwl(grid, table), eval_pwl_int(grid, table))
