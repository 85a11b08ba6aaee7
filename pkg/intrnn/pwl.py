"""Quantization-aware piecewise-linear (PWL) activations.

A PWL approximation of f is built by starting from one knot per quantized
input value (a table that reproduces the look-up table exactly) and greedily
removing the knot between the two adjacent pieces whose slopes differ the
least, until the requested number of pieces remains. Knots therefore always
sit on the quantized input grid and gather where f bends the most.

Evaluation exists in a real form (the reference) and an integer form that
locates the piece by binary search and applies one fixed-point slope and
one fixed-point intercept per piece, both over a common power of two, and
rounds once. The integer constants start from the exact rationals of the
real form and are then checked against it on every input grid value; the
rare piece where a near tie rounds differently is moved by a few units, so
the two forms agree bit for bit.
"""
import heapq
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import expit

from intrnn import debug
from intrnn.errors import PwlError
from intrnn.quant_core import (compute_qparams, dequantize, quantize, rounding_right_shift,
                               saturate)

logger = logging.getLogger(__name__)

FUNCTIONS = {
    "sigmoid": expit,
    "tanh": np.tanh,
    "exp": np.exp,
    "identity": lambda x: np.array(x, dtype=np.float64, copy=True),
}

#: Real output ranges of the bounded activations, on 8-bit grids.
OUTPUT_RANGES = {
    "sigmoid": (0.0, 1.0),
    "tanh": (-1.0, 1.0),
    "exp": (0.0, 1.0),
}

#: delta * slope + intercept stays below 2**TOTAL_BITS in magnitude.
TOTAL_BITS = 60
#: How far the slope of one piece may move to honour a near tie.
SLOPE_SEARCH = 64
PWL16_CANDIDATES = 1 << 12


def resolve_function(f):
    """Returns (name, callable) for a registered name or a callable."""
    if callable(f):
        return getattr(f, "__name__", "custom"), f
    try:
        return f, FUNCTIONS[f]
    except KeyError:
        raise PwlError("unknown function {!r}, expected one of {}".format(f, sorted(FUNCTIONS)))


def output_qparams(name, in_qp=None):
    """The fixed 8-bit output QuantParams of a registered activation."""
    if name == "identity":
        if in_qp is None:
            raise PwlError("identity output range follows its input range")
        return in_qp
    try:
        low, high = OUTPUT_RANGES[name]
    except KeyError:
        raise PwlError("no fixed output range for {!r}".format(name))
    return compute_qparams(low, high, 8)


def build_lut(f, in_qp, out_qp):
    """Maps every input grid value q to quantize(f(dequantize(q)))."""
    _, func = resolve_function(f)
    if in_qp.bitwidth != 8:
        logger.debug("building a %d-entry look-up table", in_qp.qmax + 1)
    return quantize(func(dequantize(in_qp.grid(), in_qp)), out_qp)


def _validate_knots(knots, intercepts, n_pieces):
    if n_pieces < 1:
        raise PwlError("a PWL needs at least one piece, not {}".format(n_pieces))
    if knots.ndim != 1 or knots.shape != intercepts.shape:
        raise PwlError("knots and intercepts must be 1-d and of equal length")
    if len(knots) < n_pieces + 1:
        raise PwlError("{} knots cannot make {} pieces".format(len(knots), n_pieces))
    if np.any(np.diff(knots) <= 0):
        raise PwlError("knots must be strictly increasing")


def _select_knot_indices(knots, intercepts, n_pieces):
    """Returns the indices of the knots that survive greedy removal.

    Pieces are named by their left knot. Candidate removals live in a heap
    keyed by (|slope difference|, left knot), so ties go to the lowest
    position. Entries carry the slope versions they were computed from and
    are dropped when stale.
    """
    count = len(knots)
    last = count - 1
    following = list(range(1, count + 1))
    preceding = list(range(-1, count - 1))
    alive = [True] * count
    version = [0] * count

    def slope(p):
        q = following[p]
        return (intercepts[q] - intercepts[p]) / (knots[q] - knots[p])

    def push(p):
        if p < 0 or following[p] >= last:
            return
        q = following[p]
        diff = abs(slope(p) - slope(q))
        heapq.heappush(heap, (diff, p, version[p], version[q], q))

    heap = []
    for p in range(count - 2):
        push(p)
    remaining = count - 1
    while remaining > n_pieces:
        _, p, version_p, version_q, q = heapq.heappop(heap)
        if (not alive[p] or not alive[q] or following[p] != q
                or version[p] != version_p or version[q] != version_q):
            continue
        # Merge pieces p and q by dropping their shared knot q.
        alive[q] = False
        following[p] = following[q]
        preceding[following[q]] = p
        version[p] += 1
        remaining -= 1
        push(preceding[p])
        push(p)
    return np.flatnonzero(alive)


def select_knots(knots, intercepts, n_pieces):
    """Greedily removes knots until n_pieces pieces remain.

    Args:
        knots (array): strictly increasing real inputs.
        intercepts (array): f evaluated at the knots.
        n_pieces (int): number of pieces to keep, at least 1.

    Returns:
        tuple: (knots, slopes, intercepts) of the surviving pieces.

    Raises:
        PwlError: for n_pieces < 1 or inconsistent knot arrays.
    """
    knots = np.asarray(knots, dtype=np.float64)
    intercepts = np.asarray(intercepts, dtype=np.float64)
    _validate_knots(knots, intercepts, n_pieces)
    keep = _select_knot_indices(knots, intercepts, n_pieces)
    knots, intercepts = knots[keep], intercepts[keep]
    return knots, np.diff(intercepts) / np.diff(knots), intercepts


def _real_form(x, knots_r, slopes, intercepts):
    idx = np.clip(np.searchsorted(knots_r, x, side="right") - 1, 0, len(slopes) - 1)
    y = slopes[idx] * (x - knots_r[idx]) + intercepts[idx]
    return np.where(x == knots_r[-1], intercepts[-1], y)


def _common_shift(slopes, intercepts, widths):
    """Largest power-of-two denominator keeping every piece inside TOTAL_BITS."""
    bound = max(abs(a) * w + abs(b) for a, b, w in zip(slopes, intercepts, widths))
    shift = TOTAL_BITS - math.ceil(bound).bit_length()
    if shift < 1:
        raise PwlError("PWL outputs span too many output steps for an integer form")
    return shift


def _total_bounds(reference, zero_point, qmax, shift):
    """Range of delta * slope + intercept that rounds onto each reference output.

    The saturated ends of the output grid are open on their outer side.
    """
    target = np.asarray(reference, dtype=np.int64) - zero_point
    unit = 1 << shift
    half = unit >> 1
    low = target * unit - half + (target <= 0)
    high = target * unit + half - (target >= 0)
    unbounded = 1 << (TOTAL_BITS + 2)
    low = np.where(reference == 0, -unbounded, low)
    high = np.where(reference == qmax, unbounded, high)
    return low, high


def _fit_piece(delta, low, high, slope, intercept):
    """The integer (slope, intercept) nearest the given pair meeting every bound.

    Raises:
        PwlError: if no slope within SLOPE_SEARCH units admits an intercept.
    """
    for step in range(SLOPE_SEARCH + 1):
        for candidate in ((slope,) if step == 0 else (slope + step, slope - step)):
            lower = int(np.max(low - delta * candidate))
            upper = int(np.min(high - delta * candidate))
            if lower <= upper:
                return candidate, min(max(intercept, lower), upper)
    raise PwlError("no integer piece reproduces the real form")


def _match_real_form(knots_q, real_out, out_qp, slope_int, intercept_int, shift):
    """Moves the pieces whose integer outputs differ from real_out on the grid."""
    grid = np.arange(len(real_out), dtype=np.int64)
    idx = np.clip(np.searchsorted(knots_q, grid, side="right") - 1, 0, len(knots_q) - 1)
    delta = grid - knots_q[idx]
    low, high = _total_bounds(real_out, out_qp.zero_point, out_qp.qmax, shift)
    total = delta * slope_int[idx] + intercept_int[idx]
    moved = np.unique(idx[(total < low) | (total > high)])
    for piece in moved:
        members = idx == piece
        slope_int[piece], intercept_int[piece] = _fit_piece(
            delta[members], low[members], high[members],
            int(slope_int[piece]), int(intercept_int[piece]))
    if len(moved):
        logger.debug("moved %d pieces onto the rounding of the real form", len(moved))


@dataclass(frozen=True, eq=False)
class PwlTable(object):
    """Knots, slopes and intercepts of one PWL under fixed quantization.

    The real form holds N slopes and one intercept per knot (N + 1 values,
    ``intercepts[i] == f(knots_r[i])``). The integer form holds N + 1 pieces:
    the N chords and a flat terminal piece starting at the last knot, so that
    the last grid value is reproduced exactly. Piece i maps grid value q to
    ``(slope_int[i] * (q - knots_q[i]) + intercept_int[i]) / 2**shift``
    output steps, rounded half away, plus the output zero point.
    """
    function: str
    knots_q: np.ndarray
    knots_r: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    in_qp: object
    out_qp: object
    slope_int: np.ndarray = field(repr=False)
    intercept_int: np.ndarray = field(repr=False)
    shift: int = field(repr=False)
    func: object = field(repr=False, default=None)

    @classmethod
    def from_knots(cls, f, knots_q, in_qp, out_qp):
        """Rebuilds a table from its quantized knots.

        Raises:
            PwlError: if the knots are not a strictly increasing subset of
                the input grid spanning both of its ends.
        """
        name, func = resolve_function(f)
        knots_q = np.asarray(knots_q, dtype=np.int64)
        if len(knots_q) < 2 or np.any(np.diff(knots_q) <= 0):
            raise PwlError("a table needs at least two strictly increasing knots")
        if knots_q[0] != 0 or knots_q[-1] != in_qp.qmax:
            raise PwlError("knots must start at 0 and end at {}".format(in_qp.qmax))
        knots_r = dequantize(knots_q, in_qp)
        intercepts = np.asarray(func(knots_r), dtype=np.float64)
        slopes = np.diff(intercepts) / np.diff(knots_r)

        # Output steps per input step, and output steps at each knot.
        step_ratio = Fraction(float(in_qp.scale)) / Fraction(float(out_qp.scale))
        exact_slopes = [Fraction(float(a)) * step_ratio for a in slopes] + [Fraction(0)]
        exact_intercepts = [Fraction(float(b)) / Fraction(float(out_qp.scale)) for b in intercepts]
        widths = [int(w) for w in np.diff(knots_q)] + [0]
        shift = _common_shift(exact_slopes, exact_intercepts, widths)
        slope_int = np.array([round(a * (1 << shift)) for a in exact_slopes], dtype=np.int64)
        intercept_int = np.array([round(b * (1 << shift)) for b in exact_intercepts],
                                 dtype=np.int64)
        real_out = quantize(_real_form(dequantize(in_qp.grid(), in_qp), knots_r, slopes,
                                       intercepts), out_qp)
        _match_real_form(knots_q, real_out, out_qp, slope_int, intercept_int, shift)
        table = cls(name, knots_q, knots_r, slopes, intercepts, in_qp, out_qp,
                    slope_int, intercept_int, shift, func)
        logger.debug("%s table: %d pieces over %d-bit inputs",
                     name, table.n_pieces, in_qp.bitwidth)
        return table

    @property
    def n_pieces(self):
        return len(self.slopes)

    @property
    def slope_fractions(self):
        """Exact per-piece slopes in output units per input step."""
        return [Fraction(int(a), 1 << self.shift) for a in self.slope_int]

    @property
    def intercept_fractions(self):
        """Exact per-piece intercepts in output units, before the zero point."""
        return [Fraction(int(b), 1 << self.shift) for b in self.intercept_int]

    def piece_index(self, q):
        """Integer-form piece of each grid value (N for the last knot)."""
        idx = np.searchsorted(self.knots_q, q, side="right") - 1
        return np.clip(idx, 0, self.n_pieces)

    def memory_bytes(self):
        """Bytes of the integer form: knot, 64-bit slope and intercept per piece, one shift."""
        knot_bytes = self.in_qp.bitwidth // 8
        return len(self.knots_q) * (knot_bytes + 8 + 8) + 1

    def lut_bytes(self):
        """Bytes of the equivalent look-up table."""
        return (self.in_qp.qmax + 1) * (self.out_qp.bitwidth // 8)


def candidate_knots(in_qp, candidates=PWL16_CANDIDATES):
    """Starting knots: every 8-bit grid value, or a sub-sampled 16-bit grid."""
    if in_qp.bitwidth == 8 or candidates is None or candidates > in_qp.qmax:
        return in_qp.grid()
    picked = np.round(np.linspace(0, in_qp.qmax, candidates)).astype(np.int64)
    return np.unique(picked)


def build_pwl(f, in_qp, out_qp, n_pieces, candidates=PWL16_CANDIDATES):
    """Creates a quantization-aware PWL approximation of f.

    Args:
        f (str or callable): a registered function name or a vectorized callable.
        in_qp (QuantParams): input quantization, 8 or 16 bit.
        out_qp (QuantParams): output quantization.
        n_pieces (int): number of pieces, 1 to 2**b - 1.
        candidates (int): number of starting knots for 16-bit inputs.

    Raises:
        PwlError: for piece counts outside the range allowed by the grid.
    """
    name, func = resolve_function(f)
    if not 1 <= n_pieces <= in_qp.qmax:
        raise PwlError("pieces must be in [1, {}], not {}".format(in_qp.qmax, n_pieces))
    start = candidate_knots(in_qp, candidates)
    knots_r = dequantize(start, in_qp)
    intercepts = np.asarray(func(knots_r), dtype=np.float64)
    _validate_knots(knots_r, intercepts, n_pieces)
    keep = _select_knot_indices(knots_r, intercepts, n_pieces)
    logger.info("built %s PWL: %d of %d pieces kept", name, n_pieces, len(start) - 1)
    return PwlTable.from_knots(f, start[keep], in_qp, out_qp)


def eval_pwl_real(x, t):
    """Evaluates the real form, extending the end pieces beyond the knots."""
    x = np.asarray(x, dtype=np.float64)
    y = _real_form(x, t.knots_r, t.slopes, t.intercepts)
    return float(y) if y.ndim == 0 else y


def eval_pwl_int(q_x, t):
    """Evaluates the integer form on input grid values.

    One multiply, one add and one rounding shift per element; the piece is
    located by binary search over the quantized knots.
    """
    q = np.asarray(q_x, dtype=np.int64)
    idx = t.piece_index(q)
    delta = q - t.knots_q[idx]
    total = delta * t.slope_int[idx] + t.intercept_int[idx]
    out = saturate(np.asarray(rounding_right_shift(total, t.shift)) + t.out_qp.zero_point,
                   t.out_qp.bitwidth)
    debug.check_integer("eval_pwl_int", q, out)
    return int(out) if np.ndim(q_x) == 0 else out


def eval_pwl_float(q_x, t):
    """Evaluates f itself in floating point between the table's grids.

    Used for the configuration that keeps activations unquantized.
    """
    y = t.func(dequantize(q_x, t.in_qp))
    debug.record_float("eval_pwl_float", y)
    return quantize(y, t.out_qp)


def max_abs_error(t):
    """Largest |g(x) - f(x)| of the real form over every input grid value."""
    x = dequantize(t.in_qp.grid(), t.in_qp)
    return float(np.max(np.abs(eval_pwl_real(x, t) - t.func(x))))


def dump_rows(t):
    """Yields (q_x, real_in, real_out, int_out, piece_index) for every grid value."""
    grid = t.in_qp.grid()
    real_in = dequantize(grid, t.in_qp)
    real_out = eval_pwl_real(real_in, t)
    int_out = eval_pwl_int(grid, t)
    pieces = np.minimum(t.piece_index(grid), t.n_pieces - 1)
    for row in zip(grid, real_in, real_out, int_out, pieces):
        yield int(row[0]), float(row[1]), float(row[2]), int(row[3]), int(row[4])
