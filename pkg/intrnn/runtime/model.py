"""Float reference models and the integer models converted from them.

A model is a LayerStack that starts with its input layer (an embedding for
token inputs, any sequence layer for feature frames) and ends with exactly
one final projection producing logits.
"""
import logging

import numpy as np

from intrnn import debug
from intrnn.attention import AttentionWeights
from intrnn.errors import ConversionError, InputError, ShapeError
from intrnn.lstm import LstmWeights
from intrnn.quant_core import quantize
from intrnn.runtime.layers import (AttentionDecoderLayer, BiLstmLayer, EmbeddingLayer,
                                   FinalProjectionLayer, LstmLayer, MadNormLstmLayer,
                                   ResidualAddLayer, check_tokens)
from intrnn.runtime.stack import LayerStack

logger = logging.getLogger(__name__)

INPUT_STAGE = "input_quant"
INPUT_KINDS = ("tokens", "features")
#: Layer kinds FloatModel.random can stack between input and projection.
STACKABLE = ("lstm", "madnorm_lstm", "bilstm", "residual_add", "attention_decoder")


def _float32(values):
    """Rounds to float32 so that saved float models reload exactly."""
    return np.asarray(values, dtype=np.float32).astype(np.float64)


class _Model(object):
    """Layer bookkeeping shared by float and integer models."""

    def __init__(self, layers, input_kind="tokens", input_dim=None):
        if input_kind not in INPUT_KINDS:
            raise ConversionError("input kind must be one of {}, not {!r}".format(
                INPUT_KINDS, input_kind))
        self.layers = layers if isinstance(layers, LayerStack) else LayerStack(layers)
        if len(self.layers) < 2:
            raise ConversionError("a model needs an input layer and a final projection")
        self.layers.validate()
        self.input_kind = input_kind
        first = self.layers[0]
        if input_kind == "tokens":
            if not isinstance(first, EmbeddingLayer):
                raise ConversionError("token models start with an embedding layer")
            self.input_dim = first.vocab
        else:
            if isinstance(first, EmbeddingLayer):
                raise ConversionError("feature models cannot start with an embedding layer")
            self.input_dim = first.in_dim
        if input_dim is not None and int(input_dim) != self.input_dim:
            raise ShapeError("input dimension {} does not match the first layer's {}".format(
                input_dim, self.input_dim))
        if not isinstance(self.layers[-1], FinalProjectionLayer):
            raise ConversionError("models end with a final projection")
        if any(isinstance(layer, FinalProjectionLayer) for layer in self.layers[:-1]):
            raise ConversionError("only the last layer may be a final projection")
        self._check_widths()

    def _check_widths(self):
        widths = {}
        width = self.input_dim if self.input_kind == "features" else None
        for layer in self.layers:
            in_dim = getattr(layer, "in_dim", None)
            if in_dim is not None and width is not None and in_dim != width:
                raise ShapeError("layer {!r} reads width {}, its input has {}".format(
                    layer.name, in_dim, width))
            for reference in layer.references():
                if isinstance(layer, ResidualAddLayer) and widths[reference] != width:
                    raise ShapeError("cannot add {!r} (width {}) to width {}".format(
                        reference, widths[reference], width))
            width = getattr(layer, "out_dim", width)
            widths[layer.name] = width

    @property
    def vocab(self):
        """Number of token ids accepted (token models only)."""
        return self.input_dim if self.input_kind == "tokens" else None

    @property
    def classes(self):
        return self.layers[-1].out_dim

    def parameter_count(self):
        return sum(layer.parameter_count() for layer in self.layers)

    def _check_features(self, inputs):
        xs = np.asarray(inputs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.input_dim:
            raise InputError("feature frames must have shape (T, {}), not {}".format(
                self.input_dim, xs.shape))
        if len(xs) == 0:
            raise InputError("cannot run an empty sequence")
        return xs

    def __repr__(self):
        return "{}({}, {})".format(self.__class__.__name__, self.input_kind, self.layers)


class FloatModel(_Model):
    """The float reference network that calibration observes.

    Args:
        layers (list or LayerStack): float layers, input layer first.
        input_kind (str): "tokens" or "features".
        input_dim (Optional[int]): checked against the first layer.
    """

    def forward(self, inputs, observer=None):
        """Runs the network and returns the real logits (T, classes).

        Every layer reports its stages to observer under its own name.
        """
        if self.input_kind == "tokens":
            xs = check_tokens(inputs, self.input_dim)
        else:
            xs = self._check_features(inputs)
            if observer is not None:
                observer.observe(INPUT_STAGE, xs)
        outputs = {}
        for layer in self.layers:
            scoped = None if observer is None else observer.scoped(layer.name)
            xs = layer.forward(xs, outputs, scoped)
            outputs[layer.name] = xs
        return xs

    def required_stages(self):
        """Every stage name calibration must provide QuantParams for."""
        stages = [INPUT_STAGE] if self.input_kind == "features" else []
        for layer in self.layers:
            stages.extend("{}.{}".format(layer.name, stage) for stage in layer.required_stages())
        return stages

    @classmethod
    def random(cls, kinds=("lstm",), vocab=32, embed=16, hidden=16, features=None,
               classes=None, m_att=8, rng=None, scale=0.3):
        """A randomly initialised model for desk-scale experiments.

        Weights are drawn uniformly from [-scale, scale] and rounded to
        float32. Every stacked layer outputs ``hidden`` values, so a BiLSTM
        runs hidden // 2 cells per direction. A residual add sums the
        previous output with the output two layers back; an attention
        decoder attends to the previous layer's outputs.

        Args:
            kinds (tuple): layer kinds stacked between input and projection.
            vocab (int): token vocabulary (token models).
            embed (int): embedding width (token models).
            hidden (int): width of every stacked layer.
            features (Optional[int]): frame width; selects a feature model.
            classes (Optional[int]): logits per step, vocab by default.
            m_att (int): attention projection width.
            rng: seed or numpy Generator.
            scale (float): weight range.
        """
        rng = np.random.default_rng(rng)

        def uniform(*shape):
            return _float32(rng.uniform(-scale, scale, shape))

        def lstm_weights(n, m):
            return LstmWeights(uniform(4 * m, n), uniform(4 * m, m), uniform(4 * m))

        layers = []
        if features is None:
            layers.append(EmbeddingLayer("embedding", uniform(vocab, embed)))
            width, input_kind = embed, "tokens"
        else:
            width, input_kind = features, "features"
        names = [layer.name for layer in layers]
        for index, kind in enumerate(kinds, 1):
            name = "{}{}".format(kind, index)
            if kind == "lstm":
                layer = LstmLayer(name, lstm_weights(width, hidden))
            elif kind == "madnorm_lstm":
                layer = MadNormLstmLayer(name, lstm_weights(width, hidden))
            elif kind == "bilstm":
                if hidden % 2:
                    raise ShapeError("a BiLSTM needs an even hidden width")
                layer = BiLstmLayer(name, lstm_weights(width, hidden // 2),
                                    lstm_weights(width, hidden // 2))
            elif kind == "attention_decoder":
                if not names:
                    raise ConversionError("an attention decoder needs an earlier layer to attend to")
                attention = AttentionWeights(uniform(m_att, hidden), uniform(m_att, width),
                                             uniform(m_att), uniform(4 * hidden, width))
                layer = AttentionDecoderLayer(name, lstm_weights(width, hidden), attention,
                                              names[-1])
            elif kind == "residual_add":
                if len(names) < 2:
                    raise ConversionError("a residual add needs two earlier layers")
                layer = ResidualAddLayer(name, names[-2])
            else:
                raise ConversionError("unknown layer kind {!r}".format(kind))
            layers.append(layer)
            names.append(name)
            width = getattr(layer, "out_dim", width)
        classes = classes or vocab
        layers.append(FinalProjectionLayer("projection", uniform(classes, width),
                                           uniform(classes)))
        return cls(layers, input_kind)


class IntegerModel(_Model):
    """A converted network running on integer grids only.

    Args:
        layers (list or LayerStack): converted layers.
        input_kind (str): "tokens" or "features".
        input_dim (Optional[int]): checked against the first layer.
        input_qparams (QuantParams): grid feature frames are quantized onto
            before entering the integer region (feature models only).
        config (ConvertConfig): the settings the model was converted with.
    """

    def __init__(self, layers, input_kind="tokens", input_dim=None, input_qparams=None,
                 config=None):
        super(IntegerModel, self).__init__(layers, input_kind, input_dim)
        unconverted = [layer.name for layer in self.layers if not layer.converted]
        if unconverted:
            raise ConversionError("layers {} have not been converted".format(unconverted))
        if input_kind == "features" and input_qparams is None:
            raise ConversionError("feature models need input QuantParams")
        self.input_qparams = input_qparams
        self.config = config

    @property
    def logit_scale(self):
        """Real value of one logit step."""
        return self.layers[-1].logit_scale

    def _prepare(self, inputs):
        if self.input_kind == "tokens":
            return check_tokens(inputs, self.input_dim)
        return quantize(self._check_features(inputs), self.input_qparams)

    def run(self, inputs, float_activations=False):
        """Integer logits (T, classes) as int32.

        Args:
            inputs: token ids (T,) or feature frames (T, d).
            float_activations (bool): evaluate the nonlinearities in floating
                point between the same grids instead of through PWL tables.

        Raises:
            InputError: on an empty sequence or an id outside the vocabulary.
        """
        q = self._prepare(inputs)
        outputs = {}
        for layer in self.layers:
            q = layer.run(q, outputs, float_activations)
            debug.check_integer(layer.kind, q)
            outputs[layer.name] = q
        return np.asarray(q, dtype=np.int64).astype(np.int32)

    def run_fakequant(self, inputs):
        """The fake-quantization oracle of ``run``, computed in exact rationals."""
        q = self._prepare(inputs)
        outputs = {}
        for layer in self.layers:
            q = layer.run_oracle(q, outputs)
            outputs[layer.name] = q
        return np.asarray(q, dtype=np.int64).astype(np.int32)

    def float_model(self):
        """The float reference over the real weights the grids represent."""
        return FloatModel(list(self.layers), self.input_kind, self.input_dim)

    def dequantize_logits(self, logits):
        return np.asarray(logits, dtype=np.float64) * self.logit_scale

    def size_report(self):
        """Parameter memory of the float model against the converted one.

        Returns:
            dict: float_bytes (4 per parameter), integer_bytes (grids, 32-bit
            biases and PWL tables) and their ratio.
        """
        float_bytes = 4 * self.parameter_count()
        integer_bytes = sum(layer.integer_bytes() for layer in self.layers)
        return {"float_bytes": float_bytes, "integer_bytes": integer_bytes,
                "ratio": float_bytes / integer_bytes if integer_bytes else float("inf")}
