"""Additive (Bahdanau) attention and the attention-decoder cell.

Bit widths on the integer path::

    qproj = Wq h, kproj = Wk enc        8-bit matmuls, 8-bit results
    pre   = kproj + qproj               16 bit
    t     = tanh PWL(pre)               16 bit in, 8 bit out
    e     = v . t                       16 bit
    alpha = softmax(e)                  exp PWL 16 -> 8 bit, 32-bit denominator
    s     = sum(alpha * enc)            8 bit

The softmax subtracts the largest alignment before the exponential, keeps
the denominator as an unquantized 32-bit integer and only quantizes to 8
bits in the division. The context s enters the decoder gates through a
third matmul W_s s, rescaled into each gate's pre-activation grid.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from intrnn import fakequant
from intrnn.errors import ConversionError, ShapeError
from intrnn.lstm import (LstmState, OracleWeights, _scope, cell_update_fakequant,
                         cell_update_int, gate_preactivations_int, gate_slice,
                         gate_terms_fakequant, gate_terms_int, lstm_step_real, weight_qparams)
from intrnn.pwl import PWL16_CANDIDATES, build_pwl, eval_pwl_int, output_qparams
from intrnn.quant_core import (QuantTensor, RescaleConstant, int_matmul, quantize,
                               rounding_divide, saturate, requantize_sum)

logger = logging.getLogger(__name__)

ATTENTION_STAGES = ("qproj", "kproj", "pre", "e", "exp_in", "s")
WIDE_STAGES = ("pre", "e", "exp_in")


@dataclass(frozen=True, eq=False)
class AttentionWeights(object):
    """Real attention parameters.

    Attributes:
        w_q: (m_att, m_dec) decoder-state projection.
        w_k: (m_att, m_enc) encoder-state projection.
        v: (m_att,) alignment vector.
        w_s: (4 m_dec, m_enc) context injection into the decoder gates.
    """
    w_q: np.ndarray
    w_k: np.ndarray
    v: np.ndarray
    w_s: np.ndarray

    def __post_init__(self):
        w_q = np.atleast_2d(np.asarray(self.w_q, dtype=np.float64))
        w_k = np.atleast_2d(np.asarray(self.w_k, dtype=np.float64))
        v = np.asarray(self.v, dtype=np.float64).reshape(-1)
        w_s = np.atleast_2d(np.asarray(self.w_s, dtype=np.float64))
        m_att = w_q.shape[0]
        if w_k.shape[0] != m_att or v.shape != (m_att,):
            raise ShapeError("attention projections disagree on m_att")
        if w_s.shape != (4 * w_q.shape[1], w_k.shape[1]):
            raise ShapeError("w_s must be (4 m_dec, m_enc), not {}".format(w_s.shape))
        for name, value in (("w_q", w_q), ("w_k", w_k), ("v", v), ("w_s", w_s)):
            object.__setattr__(self, name, value)

    @classmethod
    def random(cls, m_att, m_dec, m_enc, rng=None, scale=0.3):
        rng = np.random.default_rng(rng)
        return cls(rng.uniform(-scale, scale, (m_att, m_dec)),
                   rng.uniform(-scale, scale, (m_att, m_enc)),
                   rng.uniform(-scale, scale, m_att),
                   rng.uniform(-scale, scale, (4 * m_dec, m_enc)))


def attention_real(h_prev, enc_h, w, observer=None):
    """Context vector and attention weights for one decoder step.

    Returns:
        tuple: (s of length m_enc, alpha of length T_enc).
    """
    enc_h = np.atleast_2d(np.asarray(enc_h, dtype=np.float64))
    if len(enc_h) < 1:
        raise ShapeError("attention needs at least one encoder state")
    qproj = w.w_q @ np.asarray(h_prev, dtype=np.float64)
    kproj = enc_h @ w.w_k.T
    pre = kproj + qproj
    e = np.tanh(pre) @ w.v
    shifted = e - e.max()
    weights = np.exp(shifted)
    alpha = weights / weights.sum()
    s = alpha @ enc_h
    if observer is not None:
        for name, value in (("qproj", qproj), ("kproj", kproj), ("pre", pre), ("e", e),
                            ("exp_in", shifted), ("s", s)):
            observer.observe(name, value)
    return s, alpha


def context_projection_real(s, w):
    """The gate pre-activation term W_s s."""
    return w.w_s @ s


class QuantAttentionSpec(object):
    """Integer attention: 8-bit weights, stage QuantParams, PWLs and constants.

    Args:
        wq, wk, v (QuantTensor): 8-bit projection weights.
        stages (mapping): QuantParams for "h" (decoder state), "enc"
            (encoder states) and the attention stages.
        config: conversion settings (pieces, exp_pieces, attention_bits,
            pwl16_candidates).
        tables (dict): prebuilt "tanh" and "exp" tables, e.g. when loading.

    Raises:
        ConversionError: if a stage bit width deviates from the ledger.
    """

    def __init__(self, wq, wk, v, stages, config, tables=None):
        self.wq, self.wk, self.v = wq, wk, v
        self.wq_c, self.wk_c, self.v_c = wq.centered(), wk.centered(), v.centered()
        self.qp_h, self.qp_enc = stages["h"], stages["enc"]
        for name in ATTENTION_STAGES:
            setattr(self, "qp_" + name, stages[name])
        self.attention_bits = getattr(config, "attention_bits", 16)
        self._check_ledger()
        self.qp_tanh = output_qparams("tanh")
        self.qp_exp = output_qparams("exp")
        self.qp_alpha = output_qparams("sigmoid")
        if self.qp_exp_in.max != 0.0:
            raise ConversionError("exp inputs must be calibrated on shifted alignments (max 0)")

        self.rc_qproj = RescaleConstant.from_real(wq.qparams.scale * self.qp_h.scale
                                                  / self.qp_qproj.scale)
        self.rc_kproj = RescaleConstant.from_real(wk.qparams.scale * self.qp_enc.scale
                                                  / self.qp_kproj.scale)
        self.rc_pre_q = RescaleConstant.from_real(self.qp_qproj.scale / self.qp_pre.scale)
        self.rc_pre_k = RescaleConstant.from_real(self.qp_kproj.scale / self.qp_pre.scale)
        self.rc_e = RescaleConstant.from_real(self.qp_tanh.scale * v.qparams.scale
                                              / self.qp_e.scale)
        self.rc_exp_in = RescaleConstant.from_real(self.qp_e.scale / self.qp_exp_in.scale)
        self.rc_alpha = RescaleConstant.from_real(1.0 / self.qp_alpha.scale)
        self.rc_s = RescaleConstant.from_real(self.qp_alpha.scale * self.qp_enc.scale
                                              / self.qp_s.scale)
        if tables is None:
            candidates = getattr(config, "pwl16_candidates", PWL16_CANDIDATES)
            tables = {"tanh": build_pwl("tanh", self.qp_pre, self.qp_tanh, config.pieces,
                                        candidates),
                      "exp": build_pwl("exp", self.qp_exp_in, self.qp_exp,
                                       getattr(config, "exp_pieces", config.pieces), candidates)}
        self.tables = dict(tables)

    def _check_ledger(self):
        wrong = []
        for name in ("h", "enc") + ATTENTION_STAGES:
            qp = getattr(self, "qp_" + name)
            bits = self.attention_bits if name in WIDE_STAGES else 8
            if qp.bitwidth != bits:
                wrong.append("{} is {}-bit, expected {}".format(name, qp.bitwidth, bits))
        if wrong:
            raise ConversionError("attention bit-width ledger violated: " + "; ".join(wrong))

    @classmethod
    def from_weights(cls, w, stages, config):
        quantized = [QuantTensor.from_real(x, weight_qparams(x)) for x in (w.w_q, w.w_k, w.v)]
        return cls(*quantized, stages=stages, config=config)

    def stages(self):
        table = {"h": self.qp_h, "enc": self.qp_enc}
        table.update({name: getattr(self, "qp_" + name) for name in ATTENTION_STAGES})
        return table


def attention_keys_int(q_enc, spec):
    """Encoder-side projections Wk enc, computed once per sequence (T, m_att)."""
    centered = np.atleast_2d(np.asarray(q_enc, dtype=np.int64)) - spec.qp_enc.zero_point
    acc = int_matmul(spec.wk_c, centered.T).T
    return spec.rc_kproj.requantize(acc, spec.qp_kproj.zero_point, 8)


def softmax_int(q_e, spec):
    """8-bit attention weights from 16-bit alignments.

    The largest alignment is subtracted first, so the exp PWL sees inputs in
    (-inf, 0] and the denominator contains exp(0) > 0.
    """
    q_e = np.asarray(q_e, dtype=np.int64)
    if q_e.size < 1:
        raise ShapeError("softmax needs at least one alignment")
    q_in = spec.rc_exp_in.requantize(q_e - q_e.max(), spec.qp_exp_in.zero_point,
                                     spec.qp_exp_in.bitwidth)
    numerators = eval_pwl_int(np.atleast_1d(q_in), spec.tables["exp"]) - spec.qp_exp.zero_point
    denominator = max(int(numerators.sum()), 1)
    scaled = rounding_divide(numerators * spec.rc_alpha.multiplier.mantissa,
                             denominator << spec.rc_alpha.net_shift)
    return saturate(scaled + spec.qp_alpha.zero_point, 8)


def attention_int(q_h_prev, q_enc, spec, q_keys=None):
    """Integer attention for one decoder step.

    Args:
        q_h_prev: 8-bit decoder state.
        q_enc: 8-bit encoder states (T_enc, m_enc), all on spec.qp_enc.
        spec (QuantAttentionSpec): converted attention.
        q_keys: optional precomputed attention_keys_int(q_enc, spec).

    Returns:
        tuple: (8-bit context s, 8-bit alpha).
    """
    q_enc = np.atleast_2d(np.asarray(q_enc, dtype=np.int64))
    if q_keys is None:
        q_keys = attention_keys_int(q_enc, spec)
    acc_q = int_matmul(spec.wq_c, np.asarray(q_h_prev, dtype=np.int64) - spec.qp_h.zero_point)
    q_qproj = spec.rc_qproj.requantize(acc_q, spec.qp_qproj.zero_point, 8)
    q_pre = requantize_sum([(q_keys - spec.qp_kproj.zero_point, spec.rc_pre_k),
                            (q_qproj - spec.qp_qproj.zero_point, spec.rc_pre_q)],
                           spec.qp_pre.zero_point, spec.qp_pre.bitwidth)
    tanh = eval_pwl_int(q_pre, spec.tables["tanh"]) - spec.qp_tanh.zero_point
    q_e = spec.rc_e.requantize(int_matmul(tanh, spec.v_c), spec.qp_e.zero_point,
                               spec.qp_e.bitwidth)
    q_alpha = softmax_int(q_e, spec)
    acc_s = int_matmul((q_enc - spec.qp_enc.zero_point).T, q_alpha - spec.qp_alpha.zero_point)
    q_s = spec.rc_s.requantize(acc_s, spec.qp_s.zero_point, 8)
    return q_s, q_alpha


class AttentionOracle(object):
    """Exact rational attention weights, re-quantized from real weights."""

    def __init__(self, w, spec):
        self.wq = fakequant.dequantize_exact(quantize(w.w_q, spec.wq.qparams), spec.wq.qparams)
        self.wk = fakequant.dequantize_exact(quantize(w.w_k, spec.wk.qparams), spec.wk.qparams)
        self.v = fakequant.dequantize_exact(quantize(w.v, spec.v.qparams), spec.v.qparams)


def softmax_fakequant(q_e, spec):
    """Oracle counterpart of softmax_int."""
    eff = fakequant.effective_inverse_scale
    e = np.atleast_1d(fakequant.dequantize_exact(q_e, spec.qp_e))
    q_in = fakequant.fake_quantize(e - e.max(), eff(spec.qp_e.scale, spec.rc_exp_in),
                                   spec.qp_exp_in.zero_point, spec.qp_exp_in.bitwidth)
    weights = fakequant.dequantize_exact(fakequant.fake_pwl(q_in, spec.tables["exp"]),
                                         spec.qp_exp)
    total = max(weights.sum(), Fraction(spec.qp_exp.scale))
    return fakequant.fake_quantize(weights / total, eff(1, spec.rc_alpha),
                                   spec.qp_alpha.zero_point, 8)


def attention_oracle(q_h_prev, q_enc, spec, oracle):
    """Fake-quantized attention from grid values to grid values."""
    eff = fakequant.effective_inverse_scale
    h = fakequant.dequantize_exact(q_h_prev, spec.qp_h)
    enc = fakequant.dequantize_exact(np.atleast_2d(q_enc), spec.qp_enc)
    s_wq, s_wk = Fraction(spec.wq.qparams.scale), Fraction(spec.wk.qparams.scale)
    q_keys = fakequant.fake_quantize(enc @ oracle.wk.T,
                                     eff(s_wk * Fraction(spec.qp_enc.scale), spec.rc_kproj),
                                     spec.qp_kproj.zero_point, 8)
    q_qproj = fakequant.fake_quantize(oracle.wq @ h,
                                      eff(s_wq * Fraction(spec.qp_h.scale), spec.rc_qproj),
                                      spec.qp_qproj.zero_point, 8)
    q_pre = fakequant.fake_requantize_sum(
        [(fakequant.dequantize_exact(q_keys, spec.qp_kproj), eff(spec.qp_kproj.scale, spec.rc_pre_k)),
         (fakequant.dequantize_exact(q_qproj, spec.qp_qproj), eff(spec.qp_qproj.scale, spec.rc_pre_q))],
        spec.qp_pre.zero_point, spec.qp_pre.bitwidth)
    tanh = fakequant.dequantize_exact(fakequant.fake_pwl(q_pre, spec.tables["tanh"]), spec.qp_tanh)
    q_e = fakequant.fake_quantize(
        tanh @ oracle.v,
        eff(Fraction(spec.qp_tanh.scale) * Fraction(spec.v.qparams.scale), spec.rc_e),
        spec.qp_e.zero_point, spec.qp_e.bitwidth)
    q_alpha = softmax_fakequant(q_e, spec)
    alpha = fakequant.dequantize_exact(q_alpha, spec.qp_alpha)
    q_s = fakequant.fake_quantize(
        alpha @ enc,
        eff(Fraction(spec.qp_alpha.scale) * Fraction(spec.qp_enc.scale), spec.rc_s),
        spec.qp_s.zero_point, 8)
    return q_s, q_alpha


def attention_fakequant(h_prev, enc_h, w, spec):
    """Fake-quantized attention on real values; returns real (s, alpha)."""
    q_s, q_alpha = attention_oracle(quantize(h_prev, spec.qp_h), quantize(enc_h, spec.qp_enc),
                                    spec, AttentionOracle(w, spec))
    return (spec.qp_s.scale * (q_s - spec.qp_s.zero_point),
            spec.qp_alpha.scale * (q_alpha - spec.qp_alpha.zero_point))


class QuantContextSpec(object):
    """Integer context injection W_s s into the decoder gates.

    Args:
        ws (QuantTensor): 8-bit (4 m_dec, m_enc) context weights.
        qp_s (QuantParams): context grid.
        qp_sproj (QuantParams): 8-bit grid of W_s s.
        qp_gates (dict): decoder gate pre-activation QuantParams.
    """

    def __init__(self, ws, qp_s, qp_sproj, qp_gates):
        if qp_sproj.bitwidth != 8:
            raise ConversionError("the context projection must be 8-bit")
        self.ws, self.ws_c = ws, ws.centered()
        self.m = ws.shape[0] // 4
        self.qp_s, self.qp_sproj = qp_s, qp_sproj
        self.rc_sproj = RescaleConstant.from_real(ws.qparams.scale * qp_s.scale / qp_sproj.scale)
        self.rc_gates = {g: RescaleConstant.from_real(qp_sproj.scale / qp.scale)
                         for g, qp in qp_gates.items()}

    @classmethod
    def from_weights(cls, w_s, qp_s, qp_sproj, qp_gates):
        return cls(QuantTensor.from_real(w_s, weight_qparams(w_s)), qp_s, qp_sproj, qp_gates)


def inject_context(terms, q_s, ctx):
    """Appends the rescaled W_s s term to every gate's pre-activation terms."""
    acc = int_matmul(ctx.ws_c, np.asarray(q_s, dtype=np.int64) - ctx.qp_s.zero_point)
    centered = ctx.rc_sproj.requantize(acc, ctx.qp_sproj.zero_point, 8) - ctx.qp_sproj.zero_point
    return {g: list(terms[g]) + [(centered[gate_slice(g, ctx.m)], ctx.rc_gates[g])]
            for g in terms}


def inject_context_fakequant(terms, q_s, ctx, ws_exact):
    """Oracle counterpart of inject_context on exact (values, rho) terms."""
    eff = fakequant.effective_inverse_scale
    s = fakequant.dequantize_exact(q_s, ctx.qp_s)
    q_sproj = fakequant.fake_quantize(
        ws_exact @ s, eff(Fraction(ctx.ws.qparams.scale) * Fraction(ctx.qp_s.scale), ctx.rc_sproj),
        ctx.qp_sproj.zero_point, 8)
    sproj = fakequant.dequantize_exact(q_sproj, ctx.qp_sproj)
    return {g: list(terms[g]) + [(sproj[gate_slice(g, ctx.m)],
                                  eff(ctx.qp_sproj.scale, ctx.rc_gates[g]))]
            for g in terms}


def attention_decoder_real(xs, enc_h, lstm_weights, att_weights, observer=None):
    """Real attention decoder over inputs xs (T, n) attending to enc_h.

    At step t the context is computed from the previous decoder state.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    state = LstmState.zeros(lstm_weights.m)
    hs = np.zeros((len(xs), lstm_weights.m))
    for t in range(len(xs)):
        s, _ = attention_real(state.h, enc_h, att_weights, _scope(observer, "att"))
        context = context_projection_real(s, att_weights)
        if observer is not None:
            observer.observe("sproj", context)
        state = lstm_step_real(xs[t], state, lstm_weights, observer=observer, context=context)
        hs[t] = state.h
    return hs


def attention_decoder_int(q_xs, q_enc, lstm_spec, att_spec, ctx_spec, float_activations=False):
    """Integer attention decoder; returns 8-bit h (T, m_dec)."""
    q_xs = np.atleast_2d(np.asarray(q_xs, dtype=np.int64))
    q_keys = attention_keys_int(q_enc, att_spec)
    state = LstmState.at_zero_points(lstm_spec)
    hs = np.zeros((len(q_xs), lstm_spec.m), dtype=np.int64)
    for t in range(len(q_xs)):
        q_s, _ = attention_int(state.h, q_enc, att_spec, q_keys)
        terms = inject_context(gate_terms_int(q_xs[t], state.h, lstm_spec), q_s, ctx_spec)
        state = cell_update_int(gate_preactivations_int(terms, lstm_spec), state.c, lstm_spec,
                                float_activations)
        hs[t] = state.h
    return hs


def attention_decoder_oracle(q_xs, q_enc, lstm_weights, att_weights, lstm_spec, att_spec,
                             ctx_spec):
    """Fake-quantized attention decoder from grid values to grid values."""
    q_xs = np.atleast_2d(np.asarray(q_xs, dtype=np.int64))
    lstm_oracle = OracleWeights(lstm_weights, lstm_spec)
    att_oracle = AttentionOracle(att_weights, att_spec)
    qp_ws = ctx_spec.ws.qparams
    ws_exact = fakequant.dequantize_exact(quantize(att_weights.w_s, qp_ws), qp_ws)
    state = LstmState.at_zero_points(lstm_spec)
    hs = np.zeros((len(q_xs), lstm_spec.m), dtype=np.int64)
    for t in range(len(q_xs)):
        q_s, _ = attention_oracle(state.h, q_enc, att_spec, att_oracle)
        terms = gate_terms_fakequant(q_xs[t], state.h, lstm_spec, lstm_oracle)
        terms = inject_context_fakequant(terms, q_s, ctx_spec, ws_exact)
        state = cell_update_fakequant(terms, state.c, lstm_spec)
        hs[t] = state.h
    return hs

