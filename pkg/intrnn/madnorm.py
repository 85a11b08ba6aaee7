"""Mean-absolute-deviation normalization (MadNorm).

MadNorm replaces the standard deviation of LayerNorm by the mean absolute
deviation ``d = mean(|x - mean(x)|)``, which needs no square root and keeps
the integer path to multiplies, adds and absolute values. The integer form
requantizes after each of its four stages (mean, centered input, deviation,
normalized output); every stage has its own 8-bit QuantParams.

All functions normalize along the last axis.
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from intrnn import debug, fakequant
from intrnn.errors import QuantizationError, ShapeError
from intrnn.quant_core import (QuantTensor, RescaleConstant, compute_qparams,
                               quantize, requantize_sum, rounding_divide, saturate)

logger = logging.getLogger(__name__)

LAYERNORM_EPSILON = 1e-5


def layernorm_real(x, eps=LAYERNORM_EPSILON):
    """Standardizes x by its mean and standard deviation (reference only)."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def mean_absolute_deviation(x, axis=-1, keepdims=False):
    """Returns mean(|x - mean(x)|) along axis."""
    x = np.asarray(x, dtype=np.float64)
    return np.abs(x - x.mean(axis=axis, keepdims=True)).mean(axis=axis, keepdims=keepdims)


def madnorm_real(x, gamma=None, beta=None, observer=None):
    """Normalizes x by its mean absolute deviation.

    A zero deviation yields zeros. ``observer``, when given, receives the
    intermediate stages (mu, xhat, d, y) for calibration.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    xhat = x - mu
    d = np.abs(xhat).mean(axis=-1, keepdims=True)
    safe = np.where(d > 0, d, 1.0)
    y = np.where(d > 0, xhat / safe, 0.0)
    if observer is not None:
        observer.observe("mu", mu)
        observer.observe("xhat", xhat)
        observer.observe("d", d)
        observer.observe("y", y)
    if gamma is not None:
        y = y * gamma + (0.0 if beta is None else beta)
        if observer is not None:
            observer.observe("out", y)
    return y


@dataclass(frozen=True, eq=False)
class MadNormQParams(object):
    """Stage QuantParams of one integer MadNorm and its fixed-point constants.

    Attributes:
        qp_x: input quantization, 8 or 16 bit.
        qp_mu, qp_xhat, qp_d, qp_y: 8-bit stage quantizations (qp_d.min == 0).
        H (int): normalized dimension.
        gamma, beta (QuantTensor): optional 8-bit affine parameters.
        qp_out: output quantization of the affine stage.
    """
    qp_x: object
    qp_mu: object
    qp_xhat: object
    qp_d: object
    qp_y: object
    H: int
    gamma: object = None
    beta: object = None
    qp_out: object = None
    constants: dict = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("qp_mu", "qp_xhat", "qp_d", "qp_y"):
            if getattr(self, name).bitwidth != 8:
                raise QuantizationError("MadNorm stage {} must be 8-bit".format(name))
        if self.qp_d.min < 0:
            raise QuantizationError("deviation range must be non-negative")
        if self.H < 1:
            raise ShapeError("normalized dimension must be positive")
        if (self.gamma is None) != (self.qp_out is None):
            raise QuantizationError("an affine MadNorm needs both gamma and qp_out")
        sx, smu, sxh, sd, sy = (self.qp_x.scale, self.qp_mu.scale, self.qp_xhat.scale,
                                self.qp_d.scale, self.qp_y.scale)
        constants = {
            "mu": RescaleConstant.from_real(sx / (smu * self.H)),
            "xhat_x": RescaleConstant.from_real(sx / sxh),
            "xhat_mu": RescaleConstant.from_real(smu / sxh),
            "d": RescaleConstant.from_real(sxh / (sd * self.H)),
            "y": RescaleConstant.from_real(sxh / (sd * sy)),
        }
        if self.gamma is not None:
            constants["out_gamma"] = RescaleConstant.from_real(
                self.gamma.qparams.scale * sy / self.qp_out.scale)
            if self.beta is not None:
                constants["out_beta"] = RescaleConstant.from_real(
                    self.beta.qparams.scale / self.qp_out.scale)
        object.__setattr__(self, "constants", constants)

    @property
    def output_qparams(self):
        return self.qp_out if self.gamma is not None else self.qp_y

    def stages(self):
        """Stage name to QuantParams, as recorded in a manifest."""
        table = {"x": self.qp_x, "mu": self.qp_mu, "xhat": self.qp_xhat,
                 "d": self.qp_d, "y": self.qp_y}
        if self.qp_out is not None:
            table["out"] = self.qp_out
        return table

    @classmethod
    def from_stages(cls, qp_x, stages, H, gamma=None, beta=None):
        """Builds the parameters from a mapping of stage name to QuantParams."""
        qp_out = stages["out"] if gamma is not None else None
        return cls(qp_x, stages["mu"], stages["xhat"], stages["d"], stages["y"], H,
                   gamma, beta, qp_out)

    @classmethod
    def from_ranges(cls, qp_x, H, mu_range, xhat_range, d_max, y_range):
        """Builds the parameters from real (min, max) ranges of each stage."""
        return cls(qp_x, compute_qparams(*mu_range), compute_qparams(*xhat_range),
                   compute_qparams(0.0, d_max), compute_qparams(*y_range), H)

    @classmethod
    def from_samples(cls, x, qp_x):
        """Calibrates every stage on real samples x of shape (batch, H)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mu = x.mean(axis=-1, keepdims=True)
        xhat = x - mu
        d = mean_absolute_deviation(x)
        y = madnorm_real(x)
        logger.debug("MadNorm calibration over %d samples, d in [%g, %g]",
                     len(x), d.min(), d.max())
        return cls.from_ranges(qp_x, x.shape[-1], (mu.min(), mu.max()),
                               (xhat.min(), xhat.max()), d.max(), (y.min(), y.max()))


def _unwrap(q_x, p):
    if isinstance(q_x, QuantTensor):
        return q_x.data.astype(np.int64)
    q = np.asarray(q_x, dtype=np.int64)
    if q.shape[-1] != p.H:
        raise ShapeError("expected {} features, got {}".format(p.H, q.shape[-1]))
    return q


def madnorm_int(q_x, p):
    """Integer-only MadNorm.

    Computes the mean, the centered input, the deviation and the normalized
    output with integer multiplies, adds, absolute values and requantization;
    the division by the deviation is guarded by max(q_d, 1).

    Args:
        q_x (QuantTensor or array): input grid values under p.qp_x.
        p (MadNormQParams): stage parameters.

    Returns:
        QuantTensor when given one, otherwise an int64 array.
    """
    q = _unwrap(q_x, p)
    c = p.constants
    cx = q - p.qp_x.zero_point
    q_mu = c["mu"].requantize(cx.sum(axis=-1, keepdims=True), p.qp_mu.zero_point, 8)
    q_xhat = requantize_sum([(cx, c["xhat_x"]), (p.qp_mu.zero_point - q_mu, c["xhat_mu"])],
                            p.qp_xhat.zero_point, 8)
    cxhat = q_xhat - p.qp_xhat.zero_point
    q_d = c["d"].requantize(np.abs(cxhat).sum(axis=-1, keepdims=True), p.qp_d.zero_point, 8)
    den = np.maximum(q_d - p.qp_d.zero_point, 1)
    scaled = rounding_divide(cxhat * c["y"].multiplier.mantissa,
                             den.astype(object) * (1 << c["y"].net_shift))
    q_y = saturate(scaled + p.qp_y.zero_point, 8)
    if p.gamma is not None:
        terms = [(p.gamma.centered() * (q_y - p.qp_y.zero_point), c["out_gamma"])]
        if p.beta is not None:
            terms.append((p.beta.centered(), c["out_beta"]))
        q_y = requantize_sum(terms, p.qp_out.zero_point, 8)
    debug.check_integer("madnorm_int", q, q_mu, q_xhat, q_d, q_y)
    if isinstance(q_x, QuantTensor):
        return QuantTensor(q_y.shape, q_y, p.output_qparams)
    return q_y


def madnorm_fakequant(q_x, p):
    """Fake-quantization oracle of madnorm_int, on exact rationals."""
    q = _unwrap(q_x, p)
    c = p.constants
    eff = fakequant.effective_inverse_scale
    x = fakequant.dequantize_exact(q, p.qp_x)
    mu = x.sum(axis=-1, keepdims=True) / p.H
    q_mu = fakequant.fake_quantize(mu, eff(Fraction(p.qp_x.scale) / p.H, c["mu"]),
                                   p.qp_mu.zero_point, 8)
    mu_q = fakequant.dequantize_exact(q_mu, p.qp_mu)
    q_xhat = fakequant.fake_requantize_sum(
        [(x, eff(p.qp_x.scale, c["xhat_x"])), (-mu_q, eff(p.qp_mu.scale, c["xhat_mu"]))],
        p.qp_xhat.zero_point, 8)
    xhat = fakequant.dequantize_exact(q_xhat, p.qp_xhat)
    d = np.abs(xhat).sum(axis=-1, keepdims=True) / p.H
    q_d = fakequant.fake_quantize(d, eff(Fraction(p.qp_xhat.scale) / p.H, c["d"]),
                                  p.qp_d.zero_point, 8)
    guarded = fakequant.dequantize_exact(np.maximum(q_d, p.qp_d.zero_point + 1), p.qp_d)
    y = xhat / guarded
    q_y = fakequant.fake_quantize(y, eff(Fraction(p.qp_xhat.scale) / Fraction(p.qp_d.scale),
                                         c["y"]),
                                  p.qp_y.zero_point, 8)
    if p.gamma is not None:
        y_q = fakequant.dequantize_exact(q_y, p.qp_y)
        gamma = fakequant.dequantize_exact(p.gamma.data, p.gamma.qparams)
        terms = [(gamma * y_q, eff(Fraction(p.gamma.qparams.scale) * Fraction(p.qp_y.scale),
                                   c["out_gamma"]))]
        if p.beta is not None:
            beta = fakequant.dequantize_exact(p.beta.data, p.beta.qparams)
            terms.append((np.broadcast_to(beta, y_q.shape), eff(p.beta.qparams.scale,
                                                                c["out_beta"])))
        q_y = fakequant.fake_requantize_sum(terms, p.qp_out.zero_point, 8)
    if isinstance(q_x, QuantTensor):
        return QuantTensor(q_y.shape, q_y, p.output_qparams)
    return q_y


def quantize_affine(gamma, beta):
    """8-bit QuantTensors of the affine parameters, quantized on their own ranges."""
    gamma = np.asarray(gamma, dtype=np.float64)
    qp_gamma = compute_qparams(gamma.min(), gamma.max())
    q_gamma = QuantTensor(gamma.shape, quantize(gamma, qp_gamma), qp_gamma)
    if beta is None:
        return q_gamma, None
    beta = np.asarray(beta, dtype=np.float64)
    qp_beta = compute_qparams(beta.min(), beta.max()) if np.any(beta) else compute_qparams(0, 1)
    return q_gamma, QuantTensor(beta.shape, quantize(beta, qp_beta), qp_beta)
