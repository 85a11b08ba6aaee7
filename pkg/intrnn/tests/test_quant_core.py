"""This module contains the tests of the quantization primitives in quant_core.py"""
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intrnn.errors import QuantizationError, ShapeError
from intrnn.quant_core import (FixedPointMultiplier, QuantParams, QuantTensor, RescaleConstant,
                               compute_qparams, dequantize, fixed_multiplier_from_real,
                               fold_multiplier, int_matmul, multiply_by_quantized_multiplier,
                               quantize, quantize_accumulator, requantize, requantize_sum,
                               round_half_away, rounding_divide, rounding_right_shift, saturate)


def exact_round(value):
    """Half away from zero on a Fraction."""
    magnitude = math.floor(abs(value) + Fraction(1, 2))
    return -magnitude if value < 0 else magnitude


class TestRounding:
    """Half away from zero rounding on floats and integers."""

    def test_ties_go_away_from_zero(self):
        """Ties round to the neighbour further from zero."""
        values = np.array([0.5, 1.5, 2.5, -0.5, -2.5, 2.4, -2.6])
        assert list(round_half_away(values)) == [1, 2, 3, -1, -3, 2, -3]

    def test_rounding_right_shift(self):
        """Shifts round their halves away from zero as well."""
        x = np.array([5, -5, 6, -6, 7, -7])
        assert list(rounding_right_shift(x, 1)) == [3, -3, 3, -3, 4, -4]
        assert list(rounding_right_shift(x, 0)) == list(x)

    def test_negative_shift_is_left_shift(self):
        assert list(rounding_right_shift(np.array([3, -3]), -2)) == [12, -12]

    def test_wide_values_use_exact_integers(self):
        """Values beyond the int64-safe range fall back to Python integers."""
        big = np.array([(1 << 70) + (1 << 9)], dtype=object)
        assert rounding_right_shift(big, 10)[0] == (1 << 60) + 1

    def test_rounding_divide(self):
        num = np.array([7, -7, 5, -5, 6])
        assert list(rounding_divide(num, 2)) == [4, -4, 3, -3, 3]
        assert rounding_divide(5, 3) == 2

    def test_rounding_divide_rejects_non_positive(self):
        with pytest.raises(QuantizationError):
            rounding_divide(5, 0)
        with pytest.raises(QuantizationError):
            rounding_divide(np.array([1, 2]), np.array([1, -1]))

    @given(st.integers(-(1 << 40), 1 << 40), st.integers(1, 1 << 20))
    def test_rounding_divide_matches_fractions(self, num, den):
        """Integer division agrees with exact rational rounding."""
        assert rounding_divide(num, den) == exact_round(Fraction(num, den))

    def test_saturate(self):
        assert list(saturate(np.array([-3, 0, 255, 300]), 8)) == [0, 0, 255, 255]
        assert saturate(np.array([70000]), 16)[0] == 65535


class TestQuantParams:
    """Computing and validating affine quantization parameters."""

    def test_symmetric_range(self):
        """[-1, 1] on 8 bits puts zero on the upper tie, 128."""
        qp = compute_qparams(-1.0, 1.0)
        assert qp.scale == pytest.approx(2.0 / 255)
        assert qp.zero_point == 128
        assert qp.qmax == 255
        assert qp.dtype == np.uint8

    def test_range_widened_to_zero(self):
        """Ranges not containing zero are widened so zero is exact."""
        positive = compute_qparams(0.5, 2.0)
        assert positive.min == 0.0 and positive.zero_point == 0
        negative = compute_qparams(-4.0, -1.0)
        assert negative.max == 0.0 and negative.zero_point == 255

    def test_sixteen_bit(self):
        qp = compute_qparams(-8.0, 8.0, 16)
        assert qp.qmax == 65535
        assert qp.dtype == np.uint16
        assert qp.zero_point == 32768

    @pytest.mark.parametrize("low, high, bits", [(0.0, 0.0, 8), (1.0, -1.0, 8),
                                                 (-1.0, 1.0, 12), (-np.inf, 1.0, 8)])
    def test_invalid_ranges(self, low, high, bits):
        with pytest.raises(QuantizationError):
            compute_qparams(low, high, bits)

    def test_validation(self):
        """QuantParams refuse inconsistent fields."""
        with pytest.raises(QuantizationError):
            QuantParams(-1.0, 1.0, 8, 0.0, 128)
        with pytest.raises(QuantizationError):
            QuantParams(-1.0, 1.0, 8, 2.0 / 255, 300)
        with pytest.raises(QuantizationError):
            QuantParams(0.5, 1.0, 8, 0.5 / 255, 0)

    def test_dict_round_trip(self):
        qp = compute_qparams(-3.0, 5.0, 16)
        assert QuantParams.from_dict(qp.to_dict()) == qp
        with pytest.raises(QuantizationError):
            QuantParams.from_dict({"min": 0.0})

    @given(st.floats(-100, -0.01), st.floats(0.01, 100))
    def test_zero_is_exact(self, low, high):
        """Real zero always quantizes onto the zero point and back to 0."""
        qp = compute_qparams(low, high)
        assert quantize(0.0, qp) == qp.zero_point
        assert dequantize(qp.zero_point, qp) == 0.0


class TestQuantize:
    """Mapping reals onto grids."""

    def test_clipping(self):
        qp = compute_qparams(-1.0, 1.0)
        assert list(quantize(np.array([-5.0, 5.0]), qp)) == [0, 255]

    def test_scalar_in_scalar_out(self):
        qp = compute_qparams(-1.0, 1.0)
        assert isinstance(quantize(0.25, qp), int)
        assert isinstance(dequantize(3, qp), float)

    @given(st.floats(-1, 1))
    def test_error_is_half_a_step(self, x):
        qp = compute_qparams(-1.0, 1.0)
        assert abs(dequantize(quantize(x, qp), qp) - x) <= qp.scale / 2 + 1e-12

    def test_quant_tensor(self):
        qp = compute_qparams(-1.0, 1.0)
        tensor = QuantTensor.from_real(np.array([[-1.0, 0.0], [0.5, 1.0]]), qp)
        assert tensor.data.dtype == np.uint8
        assert tensor.shape == (2, 2)
        assert list(tensor.centered()[0]) == [-128, 0]
        assert tensor.to_real()[1, 1] == pytest.approx(1.0, abs=qp.scale)

    def test_quant_tensor_validation(self):
        qp = compute_qparams(-1.0, 1.0)
        with pytest.raises(QuantizationError):
            QuantTensor((2,), np.array([0.5, 1.0]), qp)
        with pytest.raises(QuantizationError):
            QuantTensor((2,), np.array([0, 256]), qp)
        with pytest.raises(ShapeError):
            QuantTensor((3,), np.array([0, 1]), qp)

    def test_quantize_accumulator(self):
        assert list(quantize_accumulator(np.array([1.0, -2.5, 0.2]), 0.5)) == [2, -5, 0]


class TestFixedPointMultiplier:
    """Encoding real ratios as integer mantissas and shifts."""

    def test_powers_of_two(self):
        half = fixed_multiplier_from_real(0.5)
        assert half == FixedPointMultiplier(1 << 30, 0)
        quarter = fixed_multiplier_from_real(0.25)
        assert quarter.right_shift == 1
        assert quarter.represented == Fraction(1, 4)

    def test_zero(self):
        zero = fixed_multiplier_from_real(0.0)
        assert zero.mantissa == 0
        assert RescaleConstant.from_real(0.0).is_zero

    @pytest.mark.parametrize("r", [1.0, 2.0, -0.1, float("nan")])
    def test_out_of_range(self, r):
        with pytest.raises(QuantizationError):
            fixed_multiplier_from_real(r)

    def test_unnormalized_mantissa_rejected(self):
        with pytest.raises(QuantizationError):
            FixedPointMultiplier(5, 0)

    def test_rounding_up_to_one_stays_below_one(self):
        """A ratio just below 1 keeps a mantissa below 2**31."""
        m = fixed_multiplier_from_real(1.0 - 2.0 ** -40)
        assert m.mantissa < 1 << 31
        assert float(m) < 1.0

    @given(st.floats(1e-9, 1.0, exclude_max=True))
    def test_relative_error(self, r):
        m = fixed_multiplier_from_real(r)
        assert abs(float(m.represented) - r) <= r * 2.0 ** -30

    def test_fold(self):
        """Ratios of one or more move their integer part into a pre-shift."""
        m, pre = fold_multiplier(3.0)
        assert pre == 2
        assert m.represented * 4 == 3
        rescale = RescaleConstant.from_real(3.0)
        assert rescale.represented == 3
        assert float(rescale) == 3.0
        assert rescale.net_shift == 31 + m.right_shift - 2
        with pytest.raises(QuantizationError):
            fold_multiplier(2.0 ** 31)

    def test_to_dict(self):
        assert RescaleConstant.from_real(0.5).to_dict() == {
            "mantissa": 1 << 30, "right_shift": 0, "pre_shift": 0}


class TestRequantize:
    """Integer-only rescaling of 32-bit accumulators."""

    def test_known_values(self):
        m = fixed_multiplier_from_real(0.5)
        assert requantize(100, m, 10, 8) == 60
        assert requantize(101, m, 10, 8) == 61
        assert requantize(-101, m, 10, 8) == 0
        assert list(requantize(np.array([600, 2]), m, 0, 8)) == [255, 1]

    def test_pre_shift(self):
        m, pre = fold_multiplier(6.0)
        assert requantize(7, m, 0, 16, pre) == 42

    @given(st.integers(-(1 << 30), 1 << 30), st.floats(1e-6, 1.0, exclude_max=True))
    def test_matches_exact_product(self, acc, r):
        """The integer product equals rounding acc * represented exactly."""
        m = fixed_multiplier_from_real(r)
        expected = exact_round(Fraction(acc) * m.represented)
        assert multiply_by_quantized_multiplier(np.array([acc]), m)[0] == expected

    @pytest.mark.slow
    def test_million_pairs(self):
        """10**6 (acc, m) pairs against the exact rational product."""
        rng = np.random.default_rng(7)
        for _ in range(1000):
            m = fixed_multiplier_from_real(2.0 ** rng.uniform(-20.0, 0.0))
            zero_point = int(rng.integers(0, 1 << 16))
            reach = min((1 << 31) - 1, int(2 * 65536 / float(m)))
            acc = np.concatenate([rng.integers(-reach, reach + 1, 500),
                                  rng.integers(-(1 << 31) + 1, 1 << 31, 500)])
            out = requantize(acc, m, zero_point, 16)
            expected = [min(max(exact_round(int(a) * m.represented) + zero_point, 0), 65535)
                        for a in acc]
            assert list(out) == expected

    def test_accumulator_limit(self):
        m = fixed_multiplier_from_real(0.5)
        with pytest.raises(QuantizationError):
            requantize(np.array([1 << 31]), m, 0, 8)

    def test_sum_rounds_once(self):
        """Two halves add up to one before rounding, not to two after."""
        half = RescaleConstant.from_real(0.5)
        out = requantize_sum([(np.array([1]), half), (np.array([1]), half)], 0, 8)
        assert list(out) == [1]

    def test_sum_mixed_scales(self):
        terms = [(np.array([10, -10]), RescaleConstant.from_real(0.25)),
                 (np.array([3, 3]), RescaleConstant.from_real(3.0))]
        # 2.5 + 9 = 11.5 -> 12 ; -2.5 + 9 = 6.5 -> 7
        assert list(requantize_sum(terms, 100, 8)) == [112, 107]

    def test_sum_skips_zero_terms(self):
        terms = [(np.array([5, 7]), RescaleConstant.from_real(0.0))]
        assert list(requantize_sum(terms, 9, 8)) == [9, 9]

    def test_sum_broadcasts(self):
        terms = [(np.array([2, 4, 6]), RescaleConstant.from_real(0.5)),
                 (np.array(1), RescaleConstant.from_real(1.0))]
        assert list(requantize_sum(terms, 0, 8)) == [2, 3, 4]

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(-(1 << 17), 1 << 17), st.floats(1e-4, 50.0)),
                    min_size=1, max_size=4))
    def test_sum_matches_fractions(self, terms):
        rescaled = [(np.array([value]), RescaleConstant.from_real(r)) for value, r in terms]
        total = sum(Fraction(value) * rescale.represented
                    for (value, _), (_, rescale) in zip(terms, rescaled))
        expected = min(max(exact_round(total) + 32768, 0), 65535)
        assert requantize_sum(rescaled, 32768, 16)[0] == expected


class TestIntMatmul:
    """8-bit matrix products with 32-bit accumulators."""

    def test_product(self):
        w = np.array([[1, -2], [3, 4]])
        x = np.array([5, 6])
        assert list(int_matmul(w, x)) == [-7, 39]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            int_matmul(np.ones((2, 3), dtype=np.int64), np.ones(2, dtype=np.int64))

    def test_reduction_limit(self):
        with pytest.raises(ShapeError):
            int_matmul(np.ones((1, 16385), dtype=np.int64), np.ones(16385, dtype=np.int64))

    def test_worst_case_8bit_reduction_fits(self):
        """16384 products of 8-bit centered values fit 32 bits."""
        w = np.full((1, 16384), -128, dtype=np.int64)
        x = np.full(16384, -128, dtype=np.int64)
        assert int_matmul(w, x)[0] == 128 * 128 * 16384

    def test_overflow(self):
        with pytest.raises(QuantizationError):
            int_matmul(np.array([[40000]]), np.array([60000]))
