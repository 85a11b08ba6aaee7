"""Layer kinds a model is assembled from.

Every layer exists in two states. A float layer holds real weights and runs
the reference ``forward`` (feeding a calibration observer). ``convert``
returns the converted twin, which additionally holds the integer spec and
runs ``run`` (integer engine) and ``run_oracle`` (fake-quantization oracle).

Layer classes register themselves by ``kind`` through MetaLayer, so a
manifest can name the class that restores each entry.
"""
from abc import abstractmethod
from collections import OrderedDict
from fractions import Fraction

import numpy as np
import six

from intrnn import debug, fakequant
from intrnn.attention import (ATTENTION_STAGES, AttentionWeights, QuantAttentionSpec,
                              QuantContextSpec, attention_decoder_int,
                              attention_decoder_oracle, attention_decoder_real)
from intrnn.baseclasses import MetaLayer
from intrnn.errors import (ConversionError, InputError, ManifestError, QuantizationError,
                           ShapeError)
from intrnn.fileio import dtype_code
from intrnn.lstm import (BiLstmSpec, LstmWeights, QuantLstmSpec, bilstm_sequence_int,
                         bilstm_sequence_oracle, bilstm_sequence_real, lstm_sequence_int,
                         lstm_sequence_oracle, lstm_sequence_real, required_stages,
                         weight_qparams)
from intrnn.quant_core import (QuantTensor, RescaleConstant, int_matmul, quantize,
                               quantize_accumulator, saturate)

INT32_LIMIT = (1 << 31) - 1


def check_tokens(tokens, vocab):
    """Validates a token id sequence and returns it as int64.

    Raises:
        InputError: on an empty sequence, non-integer ids or ids outside
            [0, vocab).
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise InputError("token ids must form a 1-D sequence, not shape {}".format(tokens.shape))
    if tokens.size == 0:
        raise InputError("cannot run an empty sequence")
    if tokens.dtype.kind not in "iu":
        raise InputError("token ids must be integers, not {}".format(tokens.dtype))
    bad = tokens[(tokens < 0) | (tokens >= vocab)]
    if bad.size:
        raise InputError("token id {} is outside the vocabulary of {}".format(int(bad[0]), vocab))
    return tokens.astype(np.int64)


def _check_input_qparams(layer, in_qp):
    if in_qp is None:
        raise ConversionError("layer {!r} has no quantized input to consume".format(layer.name))
    return in_qp


def _producer(layer, producers, name):
    try:
        qp = producers[name]
    except KeyError:
        raise ConversionError("layer {!r} refers to unknown layer {!r}".format(layer.name, name))
    if qp is None:
        raise ConversionError("layer {!r} cannot consume the logits of {!r}".format(
            layer.name, name))
    return qp


@six.add_metaclass(MetaLayer)
class Layer(object):
    """Base class of every layer kind.

    Subclasses set ``kind`` and implement the float side (``forward``,
    ``float_tensors``, ``from_float``) and the integer side (``convert``,
    ``run``, ``run_oracle``, ``_describe``, ``_from_description``).

    Args:
        name (str): unique, dot free name; also the prefix of the layer's
            stages.
    """
    kind = None

    def __init__(self, name):
        if not name or "." in name:
            raise ConversionError("layer names must be non-empty and free of dots: {!r}"
                                  "".format(name))
        self.name = name

    @property
    def converted(self):
        return False

    @property
    def in_qparams(self):
        return None

    @property
    def out_qparams(self):
        """QuantParams of the layer's output grid (None for logits)."""
        return None

    def references(self):
        """Names of earlier layers whose outputs this layer reads."""
        return []

    def reference_qparams(self):
        """QuantParams this layer expects of each referenced output."""
        return {}

    def required_stages(self):
        """Local names of the stages calibration must observe."""
        return []

    @abstractmethod
    def forward(self, xs, outputs, observer=None):
        pass

    @abstractmethod
    def convert(self, stages, config, in_qp, producers):
        pass

    @abstractmethod
    def run(self, q, outputs, float_activations=False):
        pass

    @abstractmethod
    def run_oracle(self, q, outputs):
        pass

    @abstractmethod
    def float_tensors(self):
        """OrderedDict of the layer's real tensors."""
        pass

    def float_attributes(self):
        return {}

    @classmethod
    @abstractmethod
    def from_float(cls, name, tensors, attributes):
        pass

    def parameter_count(self):
        return sum(int(np.size(value)) for value in self.float_tensors().values())

    @abstractmethod
    def integer_bytes(self):
        """Bytes of the converted parameters, PWL tables included."""
        pass

    def _require_converted(self):
        if not self.converted:
            raise ConversionError("layer {!r} has not been converted".format(self.name))

    def describe_float(self, writer):
        tensors = OrderedDict()
        for local, value in self.float_tensors().items():
            tensors[local] = writer.tensor("{}.{}".format(self.name, local), value, "f32")
        return {"name": self.name, "kind": self.kind, "attributes": self.float_attributes(),
                "tensors": tensors}

    @classmethod
    def from_float_description(cls, desc, reader):
        try:
            tensors = {local: reader.tensor(key).astype(np.float64)
                       for local, key in desc["tensors"].items()}
            return cls.from_float(desc["name"], tensors, desc.get("attributes", {}))
        except (KeyError, TypeError) as e:
            raise ManifestError("malformed {} layer: {}".format(cls.kind, e))

    def describe(self, writer):
        """Manifest entry of a converted layer, writing its tensors through writer."""
        self._require_converted()
        desc = {"name": self.name, "kind": self.kind, "input_qparams": None,
                "output_qparams": None, "references": {}}
        if self.in_qparams is not None:
            desc["input_qparams"] = writer.qparams(self.name + ".in", self.in_qparams)
        if self.out_qparams is not None:
            desc["output_qparams"] = writer.qparams(self.name + ".out", self.out_qparams)
        for reference, qp in self.reference_qparams().items():
            desc["references"][reference] = writer.qparams(
                "{}.ref.{}".format(self.name, reference), qp)
        desc.update(self._describe(writer))
        return desc

    @classmethod
    def from_description(cls, desc, reader):
        try:
            return cls._from_description(desc, reader)
        except (KeyError, TypeError) as e:
            raise ManifestError("malformed {} layer: {}".format(cls.kind, e))

    @abstractmethod
    def _describe(self, writer):
        pass

    @classmethod
    @abstractmethod
    def _from_description(cls, desc, reader):
        pass

    def __repr__(self):
        state = "converted" if self.converted else "float"
        return "{}({!r}, {})".format(self.__class__.__name__, self.name, state)


class EmbeddingLayer(Layer):
    """Token embeddings, stored on one 8-bit grid.

    Args:
        name (str): layer name.
        table: (vocab, d) real embeddings.
        q_table (QuantTensor): the converted table.
    """
    kind = "embedding"

    def __init__(self, name, table, q_table=None):
        super(EmbeddingLayer, self).__init__(name)
        self.table = np.atleast_2d(np.asarray(table, dtype=np.float64))
        self.q_table = q_table

    @property
    def vocab(self):
        return self.table.shape[0]

    @property
    def out_dim(self):
        return self.table.shape[1]

    @property
    def converted(self):
        return self.q_table is not None

    @property
    def out_qparams(self):
        return None if self.q_table is None else self.q_table.qparams

    def forward(self, xs, outputs, observer=None):
        return self.table[check_tokens(xs, self.vocab)]

    def convert(self, stages, config, in_qp, producers):
        q_table = QuantTensor.from_real(self.table, weight_qparams(self.table))
        return EmbeddingLayer(self.name, self.table, q_table)

    def run(self, q, outputs, float_activations=False):
        return self.q_table.data[check_tokens(q, self.vocab)].astype(np.int64)

    def run_oracle(self, q, outputs):
        return self.run(q, outputs)

    def float_tensors(self):
        return OrderedDict([("table", self.table)])

    @classmethod
    def from_float(cls, name, tensors, attributes):
        return cls(name, tensors["table"])

    def integer_bytes(self):
        return self.q_table.data.nbytes

    def _describe(self, writer):
        return {"tensors": {"table": writer.tensor(self.name + ".table", self.q_table.data,
                                                   dtype_code(self.q_table.qparams))},
                "qparams": {"table": writer.qparams(self.name + ".table", self.q_table.qparams)}}

    @classmethod
    def _from_description(cls, desc, reader):
        q_table = reader.quant_tensor(desc["tensors"]["table"], desc["qparams"]["table"])
        return cls(desc["name"], q_table.to_real(), q_table)


def describe_lstm_spec(spec, prefix, writer):
    """Manifest block of one converted LSTM cell."""
    qparams = {local: writer.qparams("{}.{}".format(prefix, local), qp)
               for local, qp in spec.stages().items()}
    tensors = {}
    for local, tensor in (("wx", spec.wx), ("wh", spec.wh)):
        qparams[local] = writer.qparams("{}.{}".format(prefix, local), tensor.qparams)
        tensors[local] = writer.tensor("{}.{}".format(prefix, local), tensor.data,
                                       dtype_code(tensor.qparams))
    if spec.normalized:
        qparams["bias"] = writer.qparams(prefix + ".bias", spec.bias_q.qparams)
        tensors["bias"] = writer.tensor(prefix + ".bias", spec.bias_q.data, "u8")
    else:
        tensors["bias"] = writer.tensor(prefix + ".bias", spec.bias_int, "i32")
    tables = {name: writer.table("{}.{}".format(prefix, name), table)
              for name, table in sorted(spec.tables.items())}
    return {"m": spec.m, "n": spec.n, "normalized": spec.normalized,
            "qparams": qparams, "tensors": tensors, "tables": tables}


def load_lstm_spec(desc, reader):
    """Rebuilds a QuantLstmSpec from its manifest block."""
    weights = ("wx", "wh", "bias")
    stages = {local: reader.qparams(key) for local, key in desc["qparams"].items()
              if local not in weights}
    wx = reader.quant_tensor(desc["tensors"]["wx"], desc["qparams"]["wx"])
    wh = reader.quant_tensor(desc["tensors"]["wh"], desc["qparams"]["wh"])
    tables = {name: reader.table(table) for name, table in desc["tables"].items()}
    if desc["normalized"]:
        bias_q = reader.quant_tensor(desc["tensors"]["bias"], desc["qparams"]["bias"])
        spec = QuantLstmSpec(wx, wh, stages, reader.config, bias_q=bias_q, normalized=True,
                             tables=tables)
    else:
        bias_int = reader.tensor(desc["tensors"]["bias"]).astype(np.int64)
        spec = QuantLstmSpec(wx, wh, stages, reader.config, bias_int=bias_int, tables=tables)
    if (spec.m, spec.n) != (desc["m"], desc["n"]):
        raise ManifestError("LSTM block {}x{} does not match its tensors".format(desc["m"],
                                                                                  desc["n"]))
    return spec


def lstm_spec_bytes(spec):
    bias = spec.bias_q.data.nbytes if spec.normalized else 4 * spec.bias_int.size
    return (spec.wx.data.nbytes + spec.wh.data.nbytes + bias
            + sum(table.memory_bytes() for table in spec.tables.values()))


class LstmLayer(Layer):
    """A unidirectional LSTM over the whole sequence.

    Args:
        name (str): layer name.
        weights (LstmWeights): real parameters.
        spec (QuantLstmSpec): the converted cell.
    """
    kind = "lstm"
    normalized = False

    def __init__(self, name, weights, spec=None):
        super(LstmLayer, self).__init__(name)
        self.weights = weights
        self.spec = spec

    @property
    def in_dim(self):
        return self.weights.n

    @property
    def out_dim(self):
        return self.weights.m

    @property
    def converted(self):
        return self.spec is not None

    @property
    def in_qparams(self):
        return None if self.spec is None else self.spec.qp_x

    @property
    def out_qparams(self):
        return None if self.spec is None else self.spec.qp_h

    def required_stages(self):
        return required_stages(self.normalized)

    def forward(self, xs, outputs, observer=None):
        return lstm_sequence_real(xs, self.weights, normalized=self.normalized, observer=observer)

    def convert(self, stages, config, in_qp, producers):
        view = stages.view(self.name, {"x": _check_input_qparams(self, in_qp)})
        spec = QuantLstmSpec.from_weights(self.weights, view, config, self.normalized)
        return type(self)(self.name, self.weights, spec)

    def run(self, q, outputs, float_activations=False):
        return lstm_sequence_int(q, self.spec, float_activations=float_activations)

    def run_oracle(self, q, outputs):
        return lstm_sequence_oracle(q, self.weights, self.spec)

    def float_tensors(self):
        return OrderedDict([("w_x", self.weights.w_x), ("w_h", self.weights.w_h),
                            ("bias", self.weights.bias)])

    @classmethod
    def from_float(cls, name, tensors, attributes):
        return cls(name, LstmWeights(tensors["w_x"], tensors["w_h"], tensors["bias"]))

    def integer_bytes(self):
        return lstm_spec_bytes(self.spec)

    def _describe(self, writer):
        return {"cell": describe_lstm_spec(self.spec, self.name, writer)}

    @classmethod
    def _from_description(cls, desc, reader):
        spec = load_lstm_spec(desc["cell"], reader)
        if spec.normalized != cls.normalized:
            raise ManifestError("layer {!r} stores the wrong cell variant".format(desc["name"]))
        return cls(desc["name"], spec.dequantized_weights(), spec)


class MadNormLstmLayer(LstmLayer):
    """An LSTM normalizing its matmul results and cell state with MadNorm."""
    kind = "madnorm_lstm"
    normalized = True


class BiLstmLayer(Layer):
    """Forward and backward LSTMs over one input, outputs concatenated.

    Both directions emit onto the shared grid of the ``h`` stage, which is
    calibrated on the concatenated output.
    """
    kind = "bilstm"

    def __init__(self, name, forward_weights, backward_weights, spec=None):
        super(BiLstmLayer, self).__init__(name)
        if forward_weights.n != backward_weights.n:
            raise ShapeError("BiLSTM directions read inputs of {} and {}".format(
                forward_weights.n, backward_weights.n))
        self.forward_weights = forward_weights
        self.backward_weights = backward_weights
        self.spec = spec

    @property
    def in_dim(self):
        return self.forward_weights.n

    @property
    def out_dim(self):
        return self.forward_weights.m + self.backward_weights.m

    @property
    def converted(self):
        return self.spec is not None

    @property
    def in_qparams(self):
        return None if self.spec is None else self.spec.qp_x

    @property
    def out_qparams(self):
        return None if self.spec is None else self.spec.qp_h

    def required_stages(self):
        direction = [stage for stage in required_stages() if stage != "h"]
        return ["h"] + ["{}.{}".format(prefix, stage) for prefix in ("fwd", "bwd")
                        for stage in direction]

    def forward(self, xs, outputs, observer=None):
        hs = bilstm_sequence_real(xs, self.forward_weights, self.backward_weights, observer)
        if observer is not None:
            observer.observe("h", hs)
        return hs

    def convert(self, stages, config, in_qp, producers):
        overrides = {"x": _check_input_qparams(self, in_qp), "h": stages[self.name + ".h"]}
        forward = QuantLstmSpec.from_weights(self.forward_weights,
                                             stages.view(self.name + ".fwd", overrides), config)
        backward = QuantLstmSpec.from_weights(self.backward_weights,
                                              stages.view(self.name + ".bwd", overrides), config)
        return BiLstmLayer(self.name, self.forward_weights, self.backward_weights,
                           BiLstmSpec(forward, backward))

    def run(self, q, outputs, float_activations=False):
        return bilstm_sequence_int(q, self.spec, float_activations)

    def run_oracle(self, q, outputs):
        return bilstm_sequence_oracle(q, self.forward_weights, self.backward_weights, self.spec)

    def float_tensors(self):
        tensors = OrderedDict()
        for prefix, weights in (("fwd", self.forward_weights), ("bwd", self.backward_weights)):
            tensors[prefix + ".w_x"] = weights.w_x
            tensors[prefix + ".w_h"] = weights.w_h
            tensors[prefix + ".bias"] = weights.bias
        return tensors

    @classmethod
    def from_float(cls, name, tensors, attributes):
        directions = [LstmWeights(tensors[prefix + ".w_x"], tensors[prefix + ".w_h"],
                                  tensors[prefix + ".bias"]) for prefix in ("fwd", "bwd")]
        return cls(name, *directions)

    def integer_bytes(self):
        return lstm_spec_bytes(self.spec.forward) + lstm_spec_bytes(self.spec.backward)

    def _describe(self, writer):
        return {"forward": describe_lstm_spec(self.spec.forward, self.name + ".fwd", writer),
                "backward": describe_lstm_spec(self.spec.backward, self.name + ".bwd", writer)}

    @classmethod
    def _from_description(cls, desc, reader):
        spec = BiLstmSpec(load_lstm_spec(desc["forward"], reader),
                          load_lstm_spec(desc["backward"], reader))
        return cls(desc["name"], spec.forward.dequantized_weights(),
                   spec.backward.dequantized_weights(), spec)


class AttentionDecoderLayer(Layer):
    """An LSTM decoder attending to the outputs of an earlier layer.

    At step t the decoder reads the previous layer's output at t, computes a
    context over the ``memory`` layer's outputs from its previous hidden
    state, and adds W_s s to its gate pre-activations.

    Args:
        name (str): layer name.
        lstm_weights (LstmWeights): decoder cell parameters.
        attention_weights (AttentionWeights): attention parameters.
        memory (str): name of the layer whose outputs are attended to.
        specs (tuple): (QuantLstmSpec, QuantAttentionSpec, QuantContextSpec).
    """
    kind = "attention_decoder"

    def __init__(self, name, lstm_weights, attention_weights, memory, specs=None):
        super(AttentionDecoderLayer, self).__init__(name)
        if attention_weights.w_q.shape[1] != lstm_weights.m:
            raise ShapeError("attention expects a decoder state of {}, the cell has {}".format(
                attention_weights.w_q.shape[1], lstm_weights.m))
        self.lstm_weights = lstm_weights
        self.attention_weights = attention_weights
        self.memory = memory
        self.specs = specs

    @property
    def in_dim(self):
        return self.lstm_weights.n

    @property
    def out_dim(self):
        return self.lstm_weights.m

    @property
    def converted(self):
        return self.specs is not None

    @property
    def in_qparams(self):
        return None if self.specs is None else self.specs[0].qp_x

    @property
    def out_qparams(self):
        return None if self.specs is None else self.specs[0].qp_h

    def references(self):
        return [self.memory]

    def reference_qparams(self):
        if self.specs is None:
            return {}
        return {self.memory: self.specs[1].qp_enc}

    def required_stages(self):
        return required_stages() + ["sproj"] + ["att." + stage for stage in ATTENTION_STAGES]

    def forward(self, xs, outputs, observer=None):
        enc_h = outputs[self.memory]
        if enc_h.shape[-1] != self.attention_weights.w_k.shape[1]:
            raise ShapeError("memory {!r} has width {}, attention expects {}".format(
                self.memory, enc_h.shape[-1], self.attention_weights.w_k.shape[1]))
        return attention_decoder_real(xs, enc_h, self.lstm_weights, self.attention_weights,
                                      observer)

    def convert(self, stages, config, in_qp, producers):
        memory_qp = _producer(self, producers, self.memory)
        lstm_spec = QuantLstmSpec.from_weights(
            self.lstm_weights, stages.view(self.name, {"x": _check_input_qparams(self, in_qp)}),
            config)
        att_stages = stages.view(self.name + ".att", {"h": lstm_spec.qp_h, "enc": memory_qp})
        att_spec = QuantAttentionSpec.from_weights(self.attention_weights, att_stages, config)
        ctx_spec = QuantContextSpec.from_weights(self.attention_weights.w_s, att_spec.qp_s,
                                                 stages[self.name + ".sproj"],
                                                 lstm_spec.qp_gates)
        return AttentionDecoderLayer(self.name, self.lstm_weights, self.attention_weights,
                                     self.memory, (lstm_spec, att_spec, ctx_spec))

    def run(self, q, outputs, float_activations=False):
        lstm_spec, att_spec, ctx_spec = self.specs
        return attention_decoder_int(q, outputs[self.memory], lstm_spec, att_spec, ctx_spec,
                                     float_activations)

    def run_oracle(self, q, outputs):
        lstm_spec, att_spec, ctx_spec = self.specs
        return attention_decoder_oracle(q, outputs[self.memory], self.lstm_weights,
                                        self.attention_weights, lstm_spec, att_spec, ctx_spec)

    def float_tensors(self):
        w = self.attention_weights
        return OrderedDict([("w_x", self.lstm_weights.w_x), ("w_h", self.lstm_weights.w_h),
                            ("bias", self.lstm_weights.bias), ("att.w_q", w.w_q),
                            ("att.w_k", w.w_k), ("att.v", w.v), ("att.w_s", w.w_s)])

    def float_attributes(self):
        return {"memory": self.memory}

    @classmethod
    def from_float(cls, name, tensors, attributes):
        lstm_weights = LstmWeights(tensors["w_x"], tensors["w_h"], tensors["bias"])
        attention_weights = AttentionWeights(tensors["att.w_q"], tensors["att.w_k"],
                                             tensors["att.v"], tensors["att.w_s"])
        return cls(name, lstm_weights, attention_weights, attributes["memory"])

    def integer_bytes(self):
        lstm_spec, att_spec, ctx_spec = self.specs
        return (lstm_spec_bytes(lstm_spec) + att_spec.wq.data.nbytes + att_spec.wk.data.nbytes
                + att_spec.v.data.nbytes + ctx_spec.ws.data.nbytes
                + sum(table.memory_bytes() for table in att_spec.tables.values()))

    def _describe(self, writer):
        lstm_spec, att_spec, ctx_spec = self.specs
        prefix = self.name + ".att"
        qparams = {local: writer.qparams("{}.{}".format(prefix, local), qp)
                   for local, qp in att_spec.stages().items()}
        tensors = {}
        for local, tensor in (("wq", att_spec.wq), ("wk", att_spec.wk), ("v", att_spec.v),
                              ("ws", ctx_spec.ws)):
            qparams[local] = writer.qparams("{}.{}".format(prefix, local), tensor.qparams)
            tensors[local] = writer.tensor("{}.{}".format(prefix, local), tensor.data,
                                           dtype_code(tensor.qparams))
        tables = {name: writer.table("{}.{}".format(prefix, name), table)
                  for name, table in sorted(att_spec.tables.items())}
        return {"memory": self.memory,
                "cell": describe_lstm_spec(lstm_spec, self.name, writer),
                "sproj": writer.qparams(self.name + ".sproj", ctx_spec.qp_sproj),
                "attention": {"qparams": qparams, "tensors": tensors, "tables": tables}}

    @classmethod
    def _from_description(cls, desc, reader):
        lstm_spec = load_lstm_spec(desc["cell"], reader)
        block = desc["attention"]
        quantized = {local: reader.quant_tensor(block["tensors"][local], block["qparams"][local])
                     for local in ("wq", "wk", "v", "ws")}
        stages = {local: reader.qparams(key) for local, key in block["qparams"].items()
                  if local not in quantized}
        tables = {name: reader.table(table) for name, table in block["tables"].items()}
        att_spec = QuantAttentionSpec(quantized["wq"], quantized["wk"], quantized["v"], stages,
                                      reader.config, tables=tables)
        ctx_spec = QuantContextSpec(quantized["ws"], att_spec.qp_s,
                                    reader.qparams(desc["sproj"]), lstm_spec.qp_gates)
        attention_weights = AttentionWeights(*[quantized[local].to_real()
                                               for local in ("wq", "wk", "v", "ws")])
        return cls(desc["name"], lstm_spec.dequantized_weights(), attention_weights,
                   desc["memory"], (lstm_spec, att_spec, ctx_spec))


class ResidualAddLayer(Layer):
    """Adds the output of an earlier layer to the previous layer's output.

    Both operands are rescaled onto the ``out`` grid without saturation,
    added in 32 bits and saturated to 8 bits.

    Args:
        name (str): layer name.
        skip (str): name of the layer whose output is added.
        qparams (tuple): (previous output, skip output, sum) QuantParams.
    """
    kind = "residual_add"

    def __init__(self, name, skip, qparams=None):
        super(ResidualAddLayer, self).__init__(name)
        self.skip = skip
        self.qparams = qparams
        if qparams is not None:
            qp_a, qp_b, qp_out = qparams
            if qp_out.bitwidth != 8:
                raise ConversionError("residual sums are 8-bit")
            self.rc_a = RescaleConstant.from_real(qp_a.scale / qp_out.scale)
            self.rc_b = RescaleConstant.from_real(qp_b.scale / qp_out.scale)

    @property
    def converted(self):
        return self.qparams is not None

    @property
    def in_qparams(self):
        return None if self.qparams is None else self.qparams[0]

    @property
    def out_qparams(self):
        return None if self.qparams is None else self.qparams[2]

    def references(self):
        return [self.skip]

    def reference_qparams(self):
        return {} if self.qparams is None else {self.skip: self.qparams[1]}

    def required_stages(self):
        return ["out"]

    def forward(self, xs, outputs, observer=None):
        other = outputs[self.skip]
        if np.shape(xs) != np.shape(other):
            raise ShapeError("cannot add {} from {!r} to {}".format(
                np.shape(other), self.skip, np.shape(xs)))
        ys = np.asarray(xs, dtype=np.float64) + other
        if observer is not None:
            observer.observe("out", ys)
        return ys

    def convert(self, stages, config, in_qp, producers):
        qparams = (_check_input_qparams(self, in_qp), _producer(self, producers, self.skip),
                   stages[self.name + ".out"])
        return ResidualAddLayer(self.name, self.skip, qparams)

    def run(self, q, outputs, float_activations=False):
        qp_a, qp_b, qp_out = self.qparams
        a = self.rc_a.apply(np.asarray(q, dtype=np.int64) - qp_a.zero_point)
        b = self.rc_b.apply(np.asarray(outputs[self.skip], dtype=np.int64) - qp_b.zero_point)
        out = saturate(a + b + qp_out.zero_point, 8)
        debug.check_integer("residual_add", a, b, out)
        return out

    def run_oracle(self, q, outputs):
        qp_a, qp_b, qp_out = self.qparams
        eff = fakequant.effective_inverse_scale
        a = fakequant.fake_rescale(fakequant.dequantize_exact(q, qp_a), eff(qp_a.scale, self.rc_a))
        b = fakequant.fake_rescale(fakequant.dequantize_exact(outputs[self.skip], qp_b),
                                   eff(qp_b.scale, self.rc_b))
        return saturate(a + b + qp_out.zero_point, 8)

    def float_tensors(self):
        return OrderedDict()

    def float_attributes(self):
        return {"skip": self.skip}

    @classmethod
    def from_float(cls, name, tensors, attributes):
        return cls(name, attributes["skip"])

    def integer_bytes(self):
        return 0

    def _describe(self, writer):
        return {"skip": self.skip}

    @classmethod
    def _from_description(cls, desc, reader):
        qparams = (reader.qparams(desc["input_qparams"]),
                   reader.qparams(desc["references"][desc["skip"]]),
                   reader.qparams(desc["output_qparams"]))
        return cls(desc["name"], desc["skip"], qparams)


class FinalProjectionLayer(Layer):
    """Projects hidden states to logits, left as 32-bit integers.

    The integer logits are at scale S_w * S_x: multiplying them by
    ``logit_scale`` gives the real logits.

    Args:
        name (str): layer name.
        weights: (classes, d) real weights.
        bias: (classes,) real bias.
        quantized (tuple): (input QuantParams, 8-bit weights, 32-bit bias).
    """
    kind = "final_projection"

    def __init__(self, name, weights, bias, quantized=None):
        super(FinalProjectionLayer, self).__init__(name)
        self.weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        self.bias = np.asarray(bias, dtype=np.float64).reshape(-1)
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("projection bias {} does not match weights {}".format(
                self.bias.shape, self.weights.shape))
        self.quantized = quantized

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    @property
    def converted(self):
        return self.quantized is not None

    @property
    def in_qparams(self):
        return None if self.quantized is None else self.quantized[0]

    @property
    def logit_scale(self):
        qp_x, wq, _ = self.quantized
        return wq.qparams.scale * qp_x.scale

    def forward(self, xs, outputs, observer=None):
        return np.asarray(xs, dtype=np.float64) @ self.weights.T + self.bias

    def convert(self, stages, config, in_qp, producers):
        in_qp = _check_input_qparams(self, in_qp)
        wq = QuantTensor.from_real(self.weights, weight_qparams(self.weights))
        bias_int = quantize_accumulator(self.bias, wq.qparams.scale * in_qp.scale)
        return FinalProjectionLayer(self.name, self.weights, self.bias, (in_qp, wq, bias_int))

    def run(self, q, outputs, float_activations=False):
        qp_x, wq, bias_int = self.quantized
        centered = np.atleast_2d(np.asarray(q, dtype=np.int64)) - qp_x.zero_point
        logits = int_matmul(wq.centered(), centered.T).T + bias_int
        if logits.size and np.abs(logits).max() > INT32_LIMIT:
            raise QuantizationError("logits exceed 32 bits")
        debug.check_integer("final_projection", logits)
        return logits

    def run_oracle(self, q, outputs):
        qp_x, wq, _ = self.quantized
        qp_w = wq.qparams
        scale = Fraction(qp_w.scale) * Fraction(qp_x.scale)
        w = fakequant.dequantize_exact(quantize(self.weights, qp_w), qp_w)
        x = fakequant.dequantize_exact(np.atleast_2d(q), qp_x)
        bias = fakequant.exact(quantize_accumulator(self.bias, qp_w.scale * qp_x.scale)) * scale
        logits = fakequant.round_exact((x @ w.T + bias) / scale)
        return np.asarray(logits, dtype=object).astype(np.int64)

    def float_tensors(self):
        return OrderedDict([("weights", self.weights), ("bias", self.bias)])

    @classmethod
    def from_float(cls, name, tensors, attributes):
        return cls(name, tensors["weights"], tensors["bias"])

    def integer_bytes(self):
        return self.quantized[1].data.nbytes + 4 * self.quantized[2].size

    def _describe(self, writer):
        _, wq, bias_int = self.quantized
        return {"tensors": {"weights": writer.tensor(self.name + ".weights", wq.data,
                                                     dtype_code(wq.qparams)),
                            "bias": writer.tensor(self.name + ".bias", bias_int, "i32")},
                "qparams": {"weights": writer.qparams(self.name + ".weights", wq.qparams)}}

    @classmethod
    def _from_description(cls, desc, reader):
        qp_x = reader.qparams(desc["input_qparams"])
        wq = reader.quant_tensor(desc["tensors"]["weights"], desc["qparams"]["weights"])
        bias_int = reader.tensor(desc["tensors"]["bias"]).astype(np.int64)
        bias = bias_int * (wq.qparams.scale * qp_x.scale)
        return cls(desc["name"], wq.to_real(), bias, (qp_x, wq, bias_int))
