"""Affine quantization primitives and the integer-only rescaling machinery.

A real value x is stored as ``q = round(x / S) + Z`` on an unsigned b-bit
grid, and read back as ``r = S * (q - Z)``. Rounding is half away from zero
everywhere in the package: quantization, requantization and the PWL
evaluators all use it, so the integer engine and the fake-quantization
oracle agree bit for bit.

Rescaling between grids never touches floats at inference time. Every real
ratio is converted ahead of time into a FixedPointMultiplier (a 31-bit
mantissa and a right shift), optionally preceded by a left pre-shift for
ratios of one or more.
"""
import math
from fractions import Fraction
from functools import reduce
from dataclasses import dataclass

import numpy as np

from intrnn import debug
from intrnn.errors import QuantizationError, ShapeError

SUPPORTED_BITWIDTHS = (8, 16)
ACCUMULATOR_BITS = 32
MAX_REDUCTION = 16384
# int64 products stay exact while both operands keep this many bits in total.
_INT64_SAFE_BITS = 61


def round_half_away(x):
    """Rounds reals to the nearest integer, ties away from zero.

    Returns a float64 array (or scalar) holding integral values.
    """
    x = np.asarray(x, dtype=np.float64)
    magnitude = np.abs(x)
    whole = np.floor(magnitude)
    whole = whole + (magnitude - whole >= 0.5)
    return np.copysign(whole, x)


def _like(result, reference, cast=int):
    if np.ndim(reference) == 0:
        return cast(np.asarray(result).reshape(()))
    return result


@dataclass(frozen=True)
class QuantParams(object):
    """Affine quantization descriptor of one tensor or stage.

    Attributes:
        min (float): lower end of the represented range, never positive.
        max (float): upper end of the represented range, never negative.
        bitwidth (int): 8 or 16.
        scale (float): step size, (max - min) / (2**bitwidth - 1).
        zero_point (int): the grid value representing real 0.
    """
    min: float
    max: float
    bitwidth: int
    scale: float
    zero_point: int

    def __post_init__(self):
        if self.bitwidth not in SUPPORTED_BITWIDTHS:
            raise QuantizationError("bitwidth must be 8 or 16, not {}".format(self.bitwidth))
        if not self.min <= 0.0 <= self.max:
            raise QuantizationError("range [{}, {}] does not contain 0".format(self.min, self.max))
        if not self.scale > 0.0:
            raise QuantizationError("scale must be positive, not {}".format(self.scale))
        if not 0 <= self.zero_point <= self.qmax:
            raise QuantizationError("zero point {} outside [0, {}]".format(self.zero_point, self.qmax))

    @property
    def qmax(self):
        """Largest grid value, 2**bitwidth - 1."""
        return (1 << self.bitwidth) - 1

    @property
    def dtype(self):
        """numpy storage type of tensors quantized with these parameters."""
        return np.uint8 if self.bitwidth == 8 else np.uint16

    def grid(self):
        """Every grid value in ascending order."""
        return np.arange(self.qmax + 1, dtype=np.int64)

    def to_dict(self):
        return {"min": self.min, "max": self.max, "bitwidth": self.bitwidth,
                "scale": self.scale, "zero_point": self.zero_point}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(float(data["min"]), float(data["max"]), int(data["bitwidth"]),
                       float(data["scale"]), int(data["zero_point"]))
        except (KeyError, TypeError) as e:
            raise QuantizationError("malformed quantization parameters {!r}: {}".format(data, e))


def compute_qparams(min_value, max_value, bitwidth=8):
    """Derives QuantParams for the real range [min_value, max_value].

    The range is widened to contain 0 so that zero is exactly representable.

    Raises:
        QuantizationError: on an unsupported bitwidth, min > max, or a range
            that collapses to the single point 0 (unusable calibration).
    """
    if bitwidth not in SUPPORTED_BITWIDTHS:
        raise QuantizationError("bitwidth must be 8 or 16, not {}".format(bitwidth))
    min_value, max_value = float(min_value), float(max_value)
    if not (math.isfinite(min_value) and math.isfinite(max_value)):
        raise QuantizationError("range [{}, {}] is not finite".format(min_value, max_value))
    if min_value > max_value:
        raise QuantizationError("min {} is larger than max {}".format(min_value, max_value))
    min_value, max_value = min(min_value, 0.0), max(max_value, 0.0)
    if min_value == max_value:
        raise QuantizationError("degenerate range [0, 0]")
    levels = (1 << bitwidth) - 1
    scale = (max_value - min_value) / levels
    # -min / scale, written so that symmetric ranges land exactly on the tie.
    zero_point = int(round_half_away(-min_value * levels / (max_value - min_value)))
    zero_point = min(max(zero_point, 0), levels)
    return QuantParams(min_value, max_value, bitwidth, scale, zero_point)


def quantize(x, qp):
    """Maps reals onto the grid of qp, clipping to [qp.min, qp.max] first."""
    clipped = np.clip(np.asarray(x, dtype=np.float64), qp.min, qp.max)
    debug.record_float("quantize", clipped)
    q = round_half_away(clipped / qp.scale) + qp.zero_point
    q = np.clip(q, 0, qp.qmax).astype(np.int64)
    return _like(q, x)


def dequantize(q, qp):
    """Returns the reals S * (q - Z) represented by grid values q."""
    r = qp.scale * (np.asarray(q, dtype=np.int64) - qp.zero_point)
    debug.record_float("dequantize", r)
    return _like(r, q, cast=float)


@dataclass(frozen=True)
class FixedPointMultiplier(object):
    """A real constant in [0, 1) as ``mantissa * 2**(-31 - right_shift)``.

    The mantissa is 0 (representing 0) or normalized into [2**30, 2**31).
    """
    mantissa: int
    right_shift: int

    def __post_init__(self):
        if self.mantissa != 0 and not (1 << 30) <= self.mantissa < (1 << 31):
            raise QuantizationError("mantissa {} is not normalized".format(self.mantissa))
        if self.right_shift < 0:
            raise QuantizationError("right shift must be non-negative")

    @property
    def represented(self):
        """The exact value encoded, as a Fraction."""
        return Fraction(self.mantissa, 1 << (31 + self.right_shift))

    def __float__(self):
        return math.ldexp(self.mantissa, -31 - self.right_shift)


def fixed_multiplier_from_real(r):
    """Encodes 0 <= r < 1 as a FixedPointMultiplier.

    The relative error of the encoding is at most 2**-30.

    Raises:
        QuantizationError: for negative, non-finite or r >= 1 (fold those
            with fold_multiplier).
    """
    r = float(r)
    if not math.isfinite(r) or r < 0.0:
        raise QuantizationError("multiplier must be a non-negative real, not {}".format(r))
    if r == 0.0:
        return FixedPointMultiplier(0, 0)
    if r >= 1.0:
        raise QuantizationError("multiplier {} is not below 1; fold it into a pre-shift".format(r))
    fraction, exponent = math.frexp(r)
    mantissa = int(round_half_away(math.ldexp(fraction, 31)))
    if mantissa == 1 << 31:
        if exponent == 0:
            mantissa -= 1
        else:
            mantissa >>= 1
            exponent += 1
    return FixedPointMultiplier(mantissa, -exponent)


def fold_multiplier(r):
    """Splits any real 0 <= r < 2**30 into (FixedPointMultiplier, pre_shift).

    ``r == represented(multiplier) * 2**pre_shift`` up to 2**-30 relative.
    """
    r = float(r)
    if r < 1.0:
        return fixed_multiplier_from_real(r), 0
    fraction, exponent = math.frexp(r)
    if exponent > 30:
        raise QuantizationError("multiplier {} is too large to fold".format(r))
    return fixed_multiplier_from_real(fraction), exponent


@dataclass(frozen=True)
class RescaleConstant(object):
    """A converted real ratio: a FixedPointMultiplier and its pre-shift."""
    multiplier: FixedPointMultiplier
    pre_shift: int = 0

    @classmethod
    def from_real(cls, r):
        multiplier, pre_shift = fold_multiplier(r)
        return cls(multiplier, pre_shift)

    @property
    def is_zero(self):
        return self.multiplier.mantissa == 0

    @property
    def net_shift(self):
        """Total right shift applied after multiplying by the mantissa."""
        return 31 + self.multiplier.right_shift - self.pre_shift

    @property
    def represented(self):
        return self.multiplier.represented * (1 << self.pre_shift)

    def __float__(self):
        return math.ldexp(float(self.multiplier), self.pre_shift)

    def apply(self, acc):
        return multiply_by_quantized_multiplier(acc, self.multiplier, self.pre_shift)

    def requantize(self, acc, out_zero_point, out_bitwidth):
        return requantize(acc, self.multiplier, out_zero_point, out_bitwidth, self.pre_shift)

    def to_dict(self):
        return {"mantissa": self.multiplier.mantissa,
                "right_shift": self.multiplier.right_shift,
                "pre_shift": self.pre_shift}


def _round_shift_scalar(value, shift):
    value, shift = int(value), int(shift)
    if shift <= 0:
        return value << -shift
    magnitude = (abs(value) + (1 << (shift - 1))) >> shift
    return -magnitude if value < 0 else magnitude


_round_shift_ufunc = np.frompyfunc(_round_shift_scalar, 2, 1)


def _bit_length(values):
    values = np.asarray(values)
    if values.size == 0:
        return 0
    return int(np.max(np.abs(values))).bit_length()


def rounding_right_shift(x, shift):
    """Computes round_half_away(x / 2**shift) for integers x.

    ``shift`` may be a scalar or broadcast against x. Uses int64 when the
    operands allow it and exact Python integers otherwise.
    """
    x = np.asarray(x)
    shift = np.asarray(shift)
    if (x.dtype.kind == "O" or shift.dtype.kind == "O" or np.any(shift < 0)
            or np.any(shift > 62) or _bit_length(x) > _INT64_SAFE_BITS):
        return _round_shift_ufunc(x.astype(object), shift.astype(object))
    x = x.astype(np.int64)
    shift = shift.astype(np.int64)
    half = np.where(shift > 0, np.left_shift(np.int64(1), np.maximum(shift - 1, 0)), 0)
    magnitude = np.right_shift(np.abs(x) + half, shift)
    return np.where(x < 0, -magnitude, magnitude)


def _round_divide_scalar(num, den):
    num, den = int(num), int(den)
    magnitude = (2 * abs(num) + den) // (2 * den)
    return -magnitude if num < 0 else magnitude


_round_divide_ufunc = np.frompyfunc(_round_divide_scalar, 2, 1)


def rounding_divide(num, den):
    """Exact round_half_away(num / den) for integers num and positive den."""
    den = np.asarray(den)
    if np.any(den <= 0):
        raise QuantizationError("rounding_divide needs a positive denominator")
    result = _round_divide_ufunc(np.asarray(num).astype(object), den.astype(object))
    return result


def saturate(x, bitwidth):
    """Clamps integers to [0, 2**bitwidth - 1] and returns int64."""
    x = np.asarray(x)
    top = (1 << bitwidth) - 1
    return np.minimum(np.maximum(x, 0), top).astype(np.int64)


def _check_accumulator(acc, site):
    acc = np.asarray(acc)
    if acc.size and _bit_length(acc) > ACCUMULATOR_BITS - 1:
        raise QuantizationError("{} accumulator exceeds {} bits".format(site, ACCUMULATOR_BITS))


def multiply_by_quantized_multiplier(acc, multiplier, pre_shift=0):
    """Scales 32-bit accumulators by a fixed-point multiplier, rounded.

    Computes round_half_away(acc * mantissa / 2**(31 + right_shift - pre_shift))
    with one integer multiply and one rounding shift, without saturation.
    """
    acc = np.asarray(acc, dtype=np.int64)
    _check_accumulator(acc, "requantize")
    product = acc * np.int64(multiplier.mantissa)
    result = rounding_right_shift(product, 31 + multiplier.right_shift - pre_shift)
    return np.asarray(result).astype(np.int64)


def requantize(acc, m, out_zero_point, out_bitwidth, pre_shift=0):
    """Rescales a 32-bit accumulator onto an output grid.

    Returns clamp(round(acc * represented(m) * 2**pre_shift) + out_zero_point,
    0, 2**out_bitwidth - 1), computed with integer operations only.
    """
    scaled = multiply_by_quantized_multiplier(acc, m, pre_shift)
    out = saturate(scaled + out_zero_point, out_bitwidth)
    debug.check_integer("requantize", acc, out)
    return _like(out, acc)


def requantize_sum(terms, out_zero_point, out_bitwidth):
    """Requantizes a sum of differently scaled integer terms, rounding once.

    Args:
        terms (list): (values, RescaleConstant) pairs; values are centered
            integers (zero point already subtracted) and broadcast together.
        out_zero_point (int): zero point of the output grid.
        out_bitwidth (int): 8 or 16.

    Returns:
        int64 array: clamp(round(sum(values * represented)) + Z).
    """
    terms = [(np.asarray(values), rescale) for values, rescale in terms]
    shape = np.broadcast(*[values for values, _ in terms]).shape if terms else ()
    live = [(values, rescale) for values, rescale in terms if not rescale.is_zero]
    if not live:
        return saturate(np.full(shape, out_zero_point, dtype=np.int64), out_bitwidth)
    common = max(rescale.net_shift for _, rescale in live)
    wide = any(_bit_length(values) + 31 + (common - rescale.net_shift) > _INT64_SAFE_BITS - 1
               for values, rescale in live)
    scaled_terms = []
    for values, rescale in live:
        factor = rescale.multiplier.mantissa << (common - rescale.net_shift)
        if wide:
            scaled_terms.append(values.astype(object) * factor)
        else:
            scaled_terms.append(values.astype(np.int64) * np.int64(factor))
    total = reduce(np.add, scaled_terms)
    out = saturate(np.asarray(rounding_right_shift(total, common)) + out_zero_point, out_bitwidth)
    out = np.broadcast_to(out, shape).copy()
    debug.check_integer("requantize_sum", out, *[values for values, _ in terms])
    return out


def int_matmul(w_centered, x_centered):
    """8-bit matrix products with 32-bit accumulation.

    Both operands are centered integer grids (zero points subtracted).

    Raises:
        ShapeError: on mismatched or oversized reduction dimensions.
        QuantizationError: if an accumulator leaves the signed 32-bit range.
    """
    w_centered = np.asarray(w_centered, dtype=np.int64)
    x_centered = np.asarray(x_centered, dtype=np.int64)
    if w_centered.shape[-1] != x_centered.shape[0]:
        raise ShapeError("cannot multiply {} by {}".format(w_centered.shape, x_centered.shape))
    if x_centered.shape[0] > MAX_REDUCTION:
        raise ShapeError("reduction dimension {} exceeds {}".format(x_centered.shape[0], MAX_REDUCTION))
    acc = w_centered @ x_centered
    _check_accumulator(acc, "matmul")
    debug.check_integer("int_matmul", w_centered, x_centered, acc)
    return acc


def quantize_accumulator(values, scale):
    """Quantizes reals (e.g. biases) to signed 32-bit integers of step scale."""
    q = round_half_away(np.asarray(values, dtype=np.float64) / scale)
    limit = (1 << (ACCUMULATOR_BITS - 1)) - 1
    return np.clip(q, -limit, limit).astype(np.int64)


@dataclass(frozen=True)
class QuantTensor(object):
    """A quantized tensor: grid values with their QuantParams."""
    shape: tuple
    data: np.ndarray
    qparams: QuantParams

    def __post_init__(self):
        data = np.asarray(self.data)
        shape = tuple(int(d) for d in self.shape)
        if data.dtype.kind not in "iu":
            raise QuantizationError("quantized data must be integers, not {}".format(data.dtype))
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise ShapeError("{} values cannot fill shape {}".format(data.size, shape))
        if data.size and (data.min() < 0 or data.max() > self.qparams.qmax):
            raise QuantizationError("values outside the {}-bit grid".format(self.qparams.bitwidth))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data.astype(self.qparams.dtype).reshape(shape))

    @classmethod
    def from_real(cls, x, qp):
        x = np.asarray(x, dtype=np.float64)
        return cls(x.shape, quantize(x, qp), qp)

    def to_real(self):
        return dequantize(self.data, self.qparams)

    def centered(self):
        """Grid values minus the zero point, as int64."""
        return self.data.astype(np.int64) - self.qparams.zero_point
