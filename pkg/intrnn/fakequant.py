"""Exact-rational arithmetic behind the fake-quantization oracle.

The oracle flows real values between stages and re-quantizes them at exactly
the points where the integer engine requantizes. All reals are held as
``fractions.Fraction`` objects inside numpy object arrays, so nothing is
lost to floating-point rounding and ties are resolved by the same
half-away-from-zero rule as the integer kernels.

A converted fixed-point constant does not encode the ideal ratio between two
scales but a nearby rational. ``effective_inverse_scale`` recovers that
rational as the reciprocal output scale the integer path actually applies.
"""
import math
from fractions import Fraction

import numpy as np

_HALF = Fraction(1, 2)

to_fraction = np.frompyfunc(Fraction, 1, 1)


def exact(values):
    """Converts numbers (ints, floats or Fractions) to an object array of Fractions."""
    return to_fraction(np.asarray(values, dtype=object))


def _round_half_away(value):
    magnitude = math.floor(abs(value) + _HALF)
    return -magnitude if value < 0 else magnitude


round_exact = np.frompyfunc(_round_half_away, 1, 1)


def dequantize_exact(q, qp):
    """Returns S * (q - Z) as exact Fractions."""
    centered = np.asarray(q, dtype=np.int64) - qp.zero_point
    return exact(centered) * Fraction(qp.scale)


def effective_inverse_scale(in_scale, rescale, pre_shift=0):
    """The factor rho with ``real * rho == accumulator * represented(rescale)``.

    Args:
        in_scale: scale of the real values being rescaled (number or Fraction).
        rescale: a RescaleConstant or FixedPointMultiplier.
        pre_shift (int): extra left shift when ``rescale`` is a bare multiplier.
    """
    return rescale.represented * (1 << pre_shift) / Fraction(in_scale)


def _clamp(q, bitwidth):
    top = (1 << bitwidth) - 1
    q = np.asarray(q, dtype=object)
    return np.minimum(np.maximum(q, 0), top).astype(np.int64)


def fake_rescale(values, rho):
    """round_half_away(v * rho) without zero point or saturation."""
    return np.asarray(round_exact(exact(values) * rho), dtype=object)


def fake_quantize(values, rho, zero_point, bitwidth):
    """clamp(round_half_away(v * rho) + Z, 0, 2**bitwidth - 1)."""
    return _clamp(fake_rescale(values, rho) + zero_point, bitwidth)


def fake_requantize_sum(terms, zero_point, bitwidth):
    """Quantizes the exact sum of (values, rho) terms with a single rounding."""
    total = sum(exact(values) * rho for values, rho in terms)
    return _clamp(np.asarray(round_exact(total), dtype=object) + zero_point, bitwidth)


def fake_pwl(q, table):
    """Evaluates the integer-form constants of a PWL table on exact rationals.

    Each piece contributes ``(A * (q - k) + B) / 2**shift`` with the table's
    int64 constants, rounded half away and offset by the output zero point.
    """
    q = np.asarray(q, dtype=np.int64)
    idx = table.piece_index(q)
    delta = exact(q - table.knots_q[idx])
    slope = np.array(table.slope_fractions, dtype=object)[idx]
    intercept = np.array(table.intercept_fractions, dtype=object)[idx]
    return _clamp(np.asarray(round_exact(delta * slope + intercept), dtype=object)
                  + table.out_qp.zero_point, table.out_qp.bitwidth)
