"""LSTM and BiLSTM cells: real reference, integer engine and fake-quant oracle.

Gate blocks are stacked in the order (i, f, j, o): input gate, forget gate,
cell candidate and output gate, each a contiguous slice of size m.

Integer cell, per step::

    mx = requantize(Wx (x - Zx) + bias)        8 bit
    mh = requantize(Wh (h - Zh))               8 bit
    g  = requantize_sum(mx, mh) per gate       8 or 16 bit
    i, f, o = sigmoid PWL (one table per gate); j = tanh PWL
    fc = requantize(f * c), ig = requantize(i * j)   cell bits
    c' = requantize_sum(fc, ig)                cell bits
    h' = requantize(o * tanh PWL(c'))          8 bit

The normalized (MadNorm) cell normalizes Wx x and Wh h separately, adds
an 8-bit bias term to the gate sums and normalizes c' before the output
tanh; the stored state keeps the un-normalized c'.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import expit

from intrnn import fakequant
from intrnn.errors import ConversionError, ShapeError
from intrnn.madnorm import MadNormQParams, madnorm_fakequant, madnorm_int, madnorm_real
from intrnn.pwl import (PWL16_CANDIDATES, build_pwl, eval_pwl_float, eval_pwl_int,
                        output_qparams)
from intrnn.quant_core import (QuantTensor, RescaleConstant, compute_qparams, int_matmul,
                               quantize, quantize_accumulator, requantize_sum)

logger = logging.getLogger(__name__)

GATES = ("i", "f", "j", "o")
SIGMOID_GATES = ("i", "f", "o")
MADNORM_STAGES = ("mu", "xhat", "d", "y")
TABLES = ("sigmoid_i", "sigmoid_f", "sigmoid_o", "tanh_j", "tanh_c")


def required_stages(normalized=False):
    """Local stage names an LSTM layer needs QuantParams for."""
    stages = ["h", "c", "mx", "mh", "fc", "ig"] + ["gate_" + g for g in GATES]
    if normalized:
        stages += ["{}.{}".format(norm, stage) for norm in ("mn_x", "mn_h", "mn_c")
                   for stage in MADNORM_STAGES]
    return stages


def weight_qparams(w):
    """8-bit QuantParams spanning a weight tensor; all-zero tensors get [-1, 1]."""
    w = np.asarray(w, dtype=np.float64)
    if not np.any(w):
        return compute_qparams(-1.0, 1.0)
    return compute_qparams(w.min(), w.max())


def _scope(observer, name):
    return None if observer is None else observer.scoped(name)


@dataclass(frozen=True, eq=False)
class LstmWeights(object):
    """Real LSTM parameters.

    Attributes:
        w_x: (4m, n) input weights.
        w_h: (4m, m) recurrent weights.
        bias: (4m,) gate biases.
    """
    w_x: np.ndarray
    w_h: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w_x = np.atleast_2d(np.asarray(self.w_x, dtype=np.float64))
        w_h = np.atleast_2d(np.asarray(self.w_h, dtype=np.float64))
        bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        rows = w_x.shape[0]
        if rows % 4 or w_h.shape != (rows, rows // 4) or bias.shape != (rows,):
            raise ShapeError("inconsistent LSTM weights: w_x {}, w_h {}, bias {}".format(
                w_x.shape, w_h.shape, bias.shape))
        object.__setattr__(self, "w_x", w_x)
        object.__setattr__(self, "w_h", w_h)
        object.__setattr__(self, "bias", bias)

    @property
    def m(self):
        return self.w_h.shape[1]

    @property
    def n(self):
        return self.w_x.shape[1]

    def gate_slice(self, gate):
        return gate_slice(gate, self.m)

    @classmethod
    def random(cls, n, m, rng=None, scale=0.1):
        """Uniform(-scale, scale) weights and biases."""
        rng = np.random.default_rng(rng)
        return cls(rng.uniform(-scale, scale, (4 * m, n)),
                   rng.uniform(-scale, scale, (4 * m, m)),
                   rng.uniform(-scale, scale, 4 * m))

    @classmethod
    def zeros(cls, n, m):
        return cls(np.zeros((4 * m, n)), np.zeros((4 * m, m)), np.zeros(4 * m))


def gate_slice(gate, m):
    index = GATES.index(gate)
    return slice(index * m, (index + 1) * m)


@dataclass(frozen=True, eq=False)
class LstmState(object):
    """Hidden and cell state of one sequence, real or quantized."""
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, m):
        return cls(np.zeros(m), np.zeros(m))

    @classmethod
    def at_zero_points(cls, spec):
        """The quantized initial state h_0 = c_0 = 0."""
        return cls(np.full(spec.m, spec.qp_h.zero_point, dtype=np.int64),
                   np.full(spec.m, spec.qp_c.zero_point, dtype=np.int64))


def lstm_step_real(x_t, state, weights, normalized=False, observer=None, context=None):
    """One real LSTM step with biases added to the pre-activations.

    Args:
        x_t: input vector of length n.
        state (LstmState): previous real state.
        weights (LstmWeights): cell parameters.
        normalized (bool): apply MadNorm to both matmul results and to c_t.
        observer: optional calibration observer receiving every stage.
        context: optional extra pre-activation term (an attention context
            already multiplied by its weights).
    """
    x = np.asarray(x_t, dtype=np.float64)
    mx = weights.w_x @ x
    mh = weights.w_h @ state.h
    if normalized:
        if observer is not None:
            observer.observe("mx", mx)
            observer.observe("mh", mh)
        z = (madnorm_real(mx, observer=_scope(observer, "mn_x"))
             + madnorm_real(mh, observer=_scope(observer, "mn_h")) + weights.bias)
    else:
        mx = mx + weights.bias
        if observer is not None:
            observer.observe("mx", mx)
            observer.observe("mh", mh)
        z = mx + mh
    if context is not None:
        z = z + context
    gates = {g: z[weights.gate_slice(g)] for g in GATES}
    if observer is not None:
        for g in GATES:
            observer.observe("gate_" + g, gates[g])
    i, f, o = expit(gates["i"]), expit(gates["f"]), expit(gates["o"])
    j = np.tanh(gates["j"])
    fc = f * state.c
    ig = i * j
    c = fc + ig
    c_in = madnorm_real(c, observer=_scope(observer, "mn_c")) if normalized else c
    h = o * np.tanh(c_in)
    if observer is not None:
        observer.observe("fc", fc)
        observer.observe("ig", ig)
        observer.observe("c", c)
        observer.observe("h", h)
    return LstmState(h, c)


def madnorm_lstm_step_real(x_t, state, weights, observer=None):
    """Real MadNorm-LSTM step."""
    return lstm_step_real(x_t, state, weights, normalized=True, observer=observer)


class QuantLstmSpec(object):
    """Everything the integer engine needs for one LSTM cell.

    Holds the 8-bit weights, the 32-bit biases (or the 8-bit bias of the
    normalized cell), every stage's QuantParams, the PWL tables and the
    fixed-point constants derived from them.

    Args:
        wx (QuantTensor): 8-bit input weights (4m, n).
        wh (QuantTensor): 8-bit recurrent weights (4m, m).
        stages (mapping): local stage name to QuantParams, including "x".
        config: conversion settings (cell_bits, gate_bits, pieces,
            pwl16_candidates).
        bias_int (array): 32-bit biases at scale S_wx * S_x (plain cell).
        bias_q (QuantTensor): 8-bit bias term (normalized cell).
        normalized (bool): MadNorm variant.
        tables (dict): prebuilt PWL tables by name, e.g. when loading.

    Raises:
        ConversionError: if a stage is missing or breaks the bit-width ledger.
    """

    def __init__(self, wx, wh, stages, config, bias_int=None, bias_q=None,
                 normalized=False, tables=None):
        self.wx, self.wh = wx, wh
        self.m, self.n = wh.shape[1], wx.shape[1]
        if wx.shape[0] != 4 * self.m or wh.shape[0] != 4 * self.m:
            raise ShapeError("weights do not stack four gate blocks of {}".format(self.m))
        self.normalized = normalized
        self.cell_bits = config.cell_bits
        self.gate_bits = config.gate_bits
        self.pieces = config.pieces
        self.qp_x = stages["x"]
        self.qp_h, self.qp_c = stages["h"], stages["c"]
        self.qp_mx, self.qp_mh = stages["mx"], stages["mh"]
        self.qp_fc, self.qp_ig = stages["fc"], stages["ig"]
        self.qp_gates = {g: stages["gate_" + g] for g in GATES}
        self._check_ledger()
        self.qp_sigmoid = output_qparams("sigmoid")
        self.qp_tanh = output_qparams("tanh")
        self.wx_c, self.wh_c = wx.centered(), wh.centered()

        if normalized:
            if bias_q is None:
                raise ConversionError("the normalized cell needs an 8-bit bias")
            self.bias_q = bias_q
            self.bias_int = None
            self.mn_x = MadNormQParams.from_stages(self.qp_mx, _prefixed(stages, "mn_x"), 4 * self.m)
            self.mn_h = MadNormQParams.from_stages(self.qp_mh, _prefixed(stages, "mn_h"), 4 * self.m)
            self.mn_c = MadNormQParams.from_stages(self.qp_c, _prefixed(stages, "mn_c"), self.m)
            source_x, source_h = self.mn_x.qp_y, self.mn_h.qp_y
            tanh_c_in = self.mn_c.qp_y
        else:
            if bias_int is None:
                raise ConversionError("the cell needs 32-bit biases")
            self.bias_int = np.asarray(bias_int, dtype=np.int64)
            self.bias_q = None
            self.mn_x = self.mn_h = self.mn_c = None
            source_x, source_h = self.qp_mx, self.qp_mh
            tanh_c_in = self.qp_c
        self.source_x, self.source_h = source_x, source_h

        self.rc_mx = RescaleConstant.from_real(wx.qparams.scale * self.qp_x.scale / self.qp_mx.scale)
        self.rc_mh = RescaleConstant.from_real(wh.qparams.scale * self.qp_h.scale / self.qp_mh.scale)
        self.rc_gates = {}
        for g in GATES:
            scale = self.qp_gates[g].scale
            rescales = [RescaleConstant.from_real(source_x.scale / scale),
                        RescaleConstant.from_real(source_h.scale / scale)]
            if normalized:
                rescales.append(RescaleConstant.from_real(bias_q.qparams.scale / scale))
            self.rc_gates[g] = rescales
        s_sig, s_tanh = self.qp_sigmoid.scale, self.qp_tanh.scale
        self.rc_fc = RescaleConstant.from_real(s_sig * self.qp_c.scale / self.qp_fc.scale)
        self.rc_ig = RescaleConstant.from_real(s_sig * s_tanh / self.qp_ig.scale)
        self.rc_c_fc = RescaleConstant.from_real(self.qp_fc.scale / self.qp_c.scale)
        self.rc_c_ig = RescaleConstant.from_real(self.qp_ig.scale / self.qp_c.scale)
        self.rc_h = RescaleConstant.from_real(s_sig * s_tanh / self.qp_h.scale)

        if tables is None:
            candidates = getattr(config, "pwl16_candidates", PWL16_CANDIDATES)
            tables = {"sigmoid_" + g: build_pwl("sigmoid", self.qp_gates[g], self.qp_sigmoid,
                                                config.pieces, candidates)
                      for g in SIGMOID_GATES}
            tables["tanh_j"] = build_pwl("tanh", self.qp_gates["j"], self.qp_tanh,
                                         config.pieces, candidates)
            tables["tanh_c"] = build_pwl("tanh", tanh_c_in, self.qp_tanh, config.pieces,
                                         candidates)
        missing = [name for name in TABLES if name not in tables]
        if missing:
            raise ConversionError("missing PWL tables {}".format(missing))
        self.tables = dict(tables)
        logger.debug("LSTM spec m=%d n=%d cell=%d-bit gates=%d-bit normalized=%s",
                     self.m, self.n, self.cell_bits, self.gate_bits, normalized)

    def _check_ledger(self):
        if self.cell_bits not in (8, 16) or self.gate_bits not in (8, 16):
            raise ConversionError("cell and gate bits must be 8 or 16")
        expected = {"x": (self.qp_x, 8), "h": (self.qp_h, 8), "mx": (self.qp_mx, 8),
                    "mh": (self.qp_mh, 8), "c": (self.qp_c, self.cell_bits),
                    "fc": (self.qp_fc, self.cell_bits), "ig": (self.qp_ig, self.cell_bits)}
        expected.update({"gate_" + g: (qp, self.gate_bits) for g, qp in self.qp_gates.items()})
        wrong = ["{} is {}-bit, expected {}".format(name, qp.bitwidth, bits)
                 for name, (qp, bits) in sorted(expected.items()) if qp.bitwidth != bits]
        if wrong:
            raise ConversionError("bit-width ledger violated: " + "; ".join(wrong))

    @classmethod
    def from_weights(cls, weights, stages, config, normalized=False):
        """Quantizes real LstmWeights against calibrated stages."""
        qp_wx, qp_wh = weight_qparams(weights.w_x), weight_qparams(weights.w_h)
        wx = QuantTensor.from_real(weights.w_x, qp_wx)
        wh = QuantTensor.from_real(weights.w_h, qp_wh)
        if normalized:
            bias_q = QuantTensor.from_real(weights.bias, weight_qparams(weights.bias))
            return cls(wx, wh, stages, config, bias_q=bias_q, normalized=True)
        bias_int = quantize_accumulator(weights.bias, qp_wx.scale * stages["x"].scale)
        return cls(wx, wh, stages, config, bias_int=bias_int)

    def stages(self):
        """Local stage name to QuantParams, as recorded in a manifest."""
        table = {"x": self.qp_x, "h": self.qp_h, "c": self.qp_c, "mx": self.qp_mx,
                 "mh": self.qp_mh, "fc": self.qp_fc, "ig": self.qp_ig}
        table.update({"gate_" + g: qp for g, qp in self.qp_gates.items()})
        if self.normalized:
            for name in ("mn_x", "mn_h", "mn_c"):
                norm = getattr(self, name)
                table.update({"{}.{}".format(name, stage): qp
                              for stage, qp in norm.stages().items() if stage != "x"})
        return table

    def dequantized_weights(self):
        """Real weights represented by the 8-bit grids."""
        if self.normalized:
            bias = self.bias_q.to_real()
        else:
            bias = self.bias_int * (self.wx.qparams.scale * self.qp_x.scale)
        return LstmWeights(self.wx.to_real(), self.wh.to_real(), bias)


class _Prefixed(object):
    def __init__(self, stages, prefix):
        self._stages, self._prefix = stages, prefix

    def __getitem__(self, name):
        return self._stages["{}.{}".format(self._prefix, name)]


def _prefixed(stages, prefix):
    return _Prefixed(stages, prefix)


def gate_terms_int(q_x, q_h, spec):
    """Centered per-gate terms and their rescales, before summation.

    Returns:
        dict: gate name to a list of (centered int values, RescaleConstant).
    """
    acc_x = int_matmul(spec.wx_c, np.asarray(q_x, dtype=np.int64) - spec.qp_x.zero_point)
    if not spec.normalized:
        acc_x = acc_x + spec.bias_int
    q_mx = spec.rc_mx.requantize(acc_x, spec.qp_mx.zero_point, 8)
    acc_h = int_matmul(spec.wh_c, np.asarray(q_h, dtype=np.int64) - spec.qp_h.zero_point)
    q_mh = spec.rc_mh.requantize(acc_h, spec.qp_mh.zero_point, 8)
    if spec.normalized:
        q_mx = madnorm_int(q_mx, spec.mn_x)
        q_mh = madnorm_int(q_mh, spec.mn_h)
    centered_x = q_mx - spec.source_x.zero_point
    centered_h = q_mh - spec.source_h.zero_point
    terms = {}
    for g in GATES:
        part = gate_slice(g, spec.m)
        rescales = spec.rc_gates[g]
        terms[g] = [(centered_x[part], rescales[0]), (centered_h[part], rescales[1])]
        if spec.normalized:
            terms[g].append((spec.bias_q.centered()[part], rescales[2]))
    return terms


def gate_preactivations_int(terms, spec):
    """Requantizes each gate's terms onto its pre-activation grid."""
    return {g: requantize_sum(terms[g], spec.qp_gates[g].zero_point, spec.gate_bits)
            for g in GATES}


def cell_update_int(q_gates, q_c, spec, float_activations=False):
    """Activations, cell update and output of one integer step.

    ``float_activations`` evaluates the nonlinearities in floating point
    between the same grids instead of through the PWL tables.
    """
    activate = eval_pwl_float if float_activations else eval_pwl_int
    tables = spec.tables
    z_sig, z_tanh = spec.qp_sigmoid.zero_point, spec.qp_tanh.zero_point
    i = activate(q_gates["i"], tables["sigmoid_i"]) - z_sig
    f = activate(q_gates["f"], tables["sigmoid_f"]) - z_sig
    o = activate(q_gates["o"], tables["sigmoid_o"]) - z_sig
    j = activate(q_gates["j"], tables["tanh_j"]) - z_tanh
    q_c = np.asarray(q_c, dtype=np.int64)
    fc = spec.rc_fc.requantize(f * (q_c - spec.qp_c.zero_point), spec.qp_fc.zero_point,
                               spec.cell_bits)
    ig = spec.rc_ig.requantize(i * j, spec.qp_ig.zero_point, spec.cell_bits)
    c = requantize_sum([(fc - spec.qp_fc.zero_point, spec.rc_c_fc),
                        (ig - spec.qp_ig.zero_point, spec.rc_c_ig)],
                       spec.qp_c.zero_point, spec.cell_bits)
    c_in = madnorm_int(c, spec.mn_c) if spec.normalized else c
    tanh_c = activate(c_in, tables["tanh_c"]) - z_tanh
    h = spec.rc_h.requantize(o * tanh_c, spec.qp_h.zero_point, 8)
    return LstmState(h, c)


def lstm_step_int(q_x, q_state, spec, float_activations=False):
    """One integer-only LSTM step on 8-bit input and state grids."""
    terms = gate_terms_int(q_x, q_state.h, spec)
    return cell_update_int(gate_preactivations_int(terms, spec), q_state.c, spec,
                           float_activations)


def madnorm_lstm_step_int(q_x, q_state, spec):
    """One integer-only MadNorm-LSTM step."""
    if not spec.normalized:
        raise ConversionError("spec was not converted for a normalized cell")
    return lstm_step_int(q_x, q_state, spec)


class OracleWeights(object):
    """Exact rational weights of the oracle, re-quantized from real weights."""

    def __init__(self, weights, spec):
        qp_wx, qp_wh = spec.wx.qparams, spec.wh.qparams
        self.wx = fakequant.dequantize_exact(quantize(weights.w_x, qp_wx), qp_wx)
        self.wh = fakequant.dequantize_exact(quantize(weights.w_h, qp_wh), qp_wh)
        self.acc_scale_x = Fraction(qp_wx.scale) * Fraction(spec.qp_x.scale)
        self.acc_scale_h = Fraction(qp_wh.scale) * Fraction(spec.qp_h.scale)
        if spec.normalized:
            qp_b = spec.bias_q.qparams
            self.bias = fakequant.dequantize_exact(quantize(weights.bias, qp_b), qp_b)
        else:
            bias_int = quantize_accumulator(weights.bias, qp_wx.scale * spec.qp_x.scale)
            self.bias = fakequant.exact(bias_int) * self.acc_scale_x


def gate_terms_fakequant(q_x, q_h, spec, oracle):
    """Oracle counterpart of gate_terms_int: (exact real values, rho) per gate."""
    eff = fakequant.effective_inverse_scale
    x = fakequant.dequantize_exact(q_x, spec.qp_x)
    h = fakequant.dequantize_exact(q_h, spec.qp_h)
    mx = oracle.wx @ x
    if not spec.normalized:
        mx = mx + oracle.bias
    q_mx = fakequant.fake_quantize(mx, eff(oracle.acc_scale_x, spec.rc_mx),
                                   spec.qp_mx.zero_point, 8)
    q_mh = fakequant.fake_quantize(oracle.wh @ h, eff(oracle.acc_scale_h, spec.rc_mh),
                                   spec.qp_mh.zero_point, 8)
    if spec.normalized:
        q_mx = madnorm_fakequant(q_mx, spec.mn_x)
        q_mh = madnorm_fakequant(q_mh, spec.mn_h)
    real_x = fakequant.dequantize_exact(q_mx, spec.source_x)
    real_h = fakequant.dequantize_exact(q_mh, spec.source_h)
    terms = {}
    for g in GATES:
        part = gate_slice(g, spec.m)
        rescales = spec.rc_gates[g]
        terms[g] = [(real_x[part], eff(spec.source_x.scale, rescales[0])),
                    (real_h[part], eff(spec.source_h.scale, rescales[1]))]
        if spec.normalized:
            terms[g].append((oracle.bias[part], eff(spec.bias_q.qparams.scale, rescales[2])))
    return terms


def cell_update_fakequant(terms, q_c, spec):
    """Oracle counterpart of gate_preactivations_int followed by cell_update_int."""
    eff = fakequant.effective_inverse_scale
    q_gates = {g: fakequant.fake_requantize_sum(terms[g], spec.qp_gates[g].zero_point,
                                                spec.gate_bits) for g in GATES}

    def activation(table, q):
        return fakequant.dequantize_exact(fakequant.fake_pwl(q, table), table.out_qp)

    i = activation(spec.tables["sigmoid_i"], q_gates["i"])
    f = activation(spec.tables["sigmoid_f"], q_gates["f"])
    o = activation(spec.tables["sigmoid_o"], q_gates["o"])
    j = activation(spec.tables["tanh_j"], q_gates["j"])
    c = fakequant.dequantize_exact(q_c, spec.qp_c)
    s_sig, s_tanh = Fraction(spec.qp_sigmoid.scale), Fraction(spec.qp_tanh.scale)
    q_fc = fakequant.fake_quantize(f * c, eff(s_sig * Fraction(spec.qp_c.scale), spec.rc_fc),
                                   spec.qp_fc.zero_point, spec.cell_bits)
    q_ig = fakequant.fake_quantize(i * j, eff(s_sig * s_tanh, spec.rc_ig),
                                   spec.qp_ig.zero_point, spec.cell_bits)
    q_c_new = fakequant.fake_requantize_sum(
        [(fakequant.dequantize_exact(q_fc, spec.qp_fc), eff(spec.qp_fc.scale, spec.rc_c_fc)),
         (fakequant.dequantize_exact(q_ig, spec.qp_ig), eff(spec.qp_ig.scale, spec.rc_c_ig))],
        spec.qp_c.zero_point, spec.cell_bits)
    c_in = madnorm_fakequant(q_c_new, spec.mn_c) if spec.normalized else q_c_new
    tanh_c = activation(spec.tables["tanh_c"], c_in)
    q_h = fakequant.fake_quantize(o * tanh_c, eff(s_sig * s_tanh, spec.rc_h),
                                  spec.qp_h.zero_point, 8)
    return LstmState(q_h, q_c_new)


def lstm_step_oracle(q_x, q_state, spec, oracle):
    """One fake-quantized step from grid values to grid values."""
    terms = gate_terms_fakequant(q_x, q_state.h, spec, oracle)
    return cell_update_fakequant(terms, q_state.c, spec)


def lstm_step_fakequant(x_t, state, weights, spec):
    """One fake-quantized LSTM step on real values.

    The input, the state and the weights are quantized with the spec's
    QuantParams; every stage is then re-quantized exactly where the integer
    engine requantizes. Returns the real state the grids represent.
    """
    q_x = quantize(x_t, spec.qp_x)
    q_state = LstmState(quantize(state.h, spec.qp_h), quantize(state.c, spec.qp_c))
    q_next = lstm_step_oracle(q_x, q_state, spec, OracleWeights(weights, spec))
    return _to_real(q_next, spec)


def madnorm_lstm_step_fakequant(x_t, state, weights, spec):
    """One fake-quantized MadNorm-LSTM step."""
    if not spec.normalized:
        raise ConversionError("spec was not converted for a normalized cell")
    return lstm_step_fakequant(x_t, state, weights, spec)


def _to_real(q_state, spec):
    return LstmState(spec.qp_h.scale * (np.asarray(q_state.h, dtype=np.int64) - spec.qp_h.zero_point),
                     spec.qp_c.scale * (np.asarray(q_state.c, dtype=np.int64) - spec.qp_c.zero_point))


def _time_order(length, reverse):
    steps = range(length)
    return reversed(steps) if reverse else steps


def _check_sequence(xs):
    if len(xs) < 1:
        raise ShapeError("a sequence needs at least one step")


def lstm_sequence_real(xs, weights, reverse=False, normalized=False, observer=None):
    """Runs the real cell over xs (T, n) from a zero state; returns h (T, m).

    A reversed pass consumes xs from the end; its outputs stay in time order.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    _check_sequence(xs)
    state = LstmState.zeros(weights.m)
    hs = np.zeros((len(xs), weights.m))
    for t in _time_order(len(xs), reverse):
        state = lstm_step_real(xs[t], state, weights, normalized, observer)
        hs[t] = state.h
    return hs


def lstm_sequence_int(q_xs, spec, reverse=False, float_activations=False):
    """Runs the integer cell over grid inputs (T, n); returns 8-bit h (T, m)."""
    q_xs = np.atleast_2d(np.asarray(q_xs, dtype=np.int64))
    _check_sequence(q_xs)
    state = LstmState.at_zero_points(spec)
    hs = np.zeros((len(q_xs), spec.m), dtype=np.int64)
    for t in _time_order(len(q_xs), reverse):
        state = lstm_step_int(q_xs[t], state, spec, float_activations)
        hs[t] = state.h
    return hs


def lstm_sequence_oracle(q_xs, weights, spec, reverse=False):
    """Fake-quantized sequence from grid inputs to grid outputs."""
    q_xs = np.atleast_2d(np.asarray(q_xs, dtype=np.int64))
    _check_sequence(q_xs)
    oracle = OracleWeights(weights, spec)
    state = LstmState.at_zero_points(spec)
    hs = np.zeros((len(q_xs), spec.m), dtype=np.int64)
    for t in _time_order(len(q_xs), reverse):
        state = lstm_step_oracle(q_xs[t], state, spec, oracle)
        hs[t] = state.h
    return hs


def lstm_sequence_fakequant(xs, weights, spec, reverse=False):
    """Fake-quantized sequence on real inputs; returns real h (T, m)."""
    q_hs = lstm_sequence_oracle(quantize(xs, spec.qp_x), weights, spec, reverse)
    return spec.qp_h.scale * (q_hs - spec.qp_h.zero_point)


class BiLstmSpec(object):
    """A forward and a backward cell whose outputs concatenate on one grid.

    Raises:
        ConversionError: if the two directions do not share input and hidden
            QuantParams.
    """

    def __init__(self, forward, backward):
        if forward.qp_h != backward.qp_h:
            raise ConversionError("BiLSTM directions must share hidden QuantParams")
        if forward.qp_x != backward.qp_x:
            raise ConversionError("BiLSTM directions must share input QuantParams")
        self.forward, self.backward = forward, backward

    @property
    def qp_h(self):
        return self.forward.qp_h

    @property
    def qp_x(self):
        return self.forward.qp_x

    @property
    def m(self):
        return self.forward.m + self.backward.m


def bilstm_sequence_real(xs, forward, backward, observer=None):
    """Real BiLSTM over xs (T, n); returns [forward h ; backward h] (T, 2m)."""
    return np.concatenate([lstm_sequence_real(xs, forward, observer=_scope(observer, "fwd")),
                           lstm_sequence_real(xs, backward, reverse=True,
                                              observer=_scope(observer, "bwd"))], axis=-1)


def bilstm_sequence_int(q_xs, spec, float_activations=False):
    """Integer BiLSTM; both halves share spec.qp_h."""
    return np.concatenate([lstm_sequence_int(q_xs, spec.forward,
                                             float_activations=float_activations),
                           lstm_sequence_int(q_xs, spec.backward, reverse=True,
                                             float_activations=float_activations)], axis=-1)


def bilstm_sequence_oracle(q_xs, forward, backward, spec):
    """Fake-quantized BiLSTM from grid inputs to grid outputs."""
    return np.concatenate([lstm_sequence_oracle(q_xs, forward, spec.forward),
                           lstm_sequence_oracle(q_xs, backward, spec.backward, reverse=True)],
                          axis=-1)


def bilstm_sequence_fakequant(xs, forward, backward, spec):
    """Fake-quantized BiLSTM on real inputs; returns real outputs (T, 2m)."""
    q_hs = bilstm_sequence_oracle(quantize(xs, spec.qp_x), forward, backward, spec)
    return spec.qp_h.scale * (q_hs - spec.qp_h.zero_point)
