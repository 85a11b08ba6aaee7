"""Containers mapping stage names to their QuantParams.

A stage name is the dotted path of an activation inside a model, for
example ``enc.gate_f`` or ``dec.att.exp_in``.
"""
from intrnn.errors import ConversionError, QuantizationError
from intrnn.quant_core import QuantParams

CELL_STAGES = ("c", "fc", "ig")
ATTENTION_WIDE_STAGES = ("pre", "e", "exp_in")


def stage_bitwidth(stage, config):
    """Bit width a stage is quantized to under a conversion config."""
    parts = stage.split(".")
    last = parts[-1]
    parent = parts[-2] if len(parts) > 1 else ""
    if last in CELL_STAGES and not parent.startswith("mn_"):
        return config.cell_bits
    if last.startswith("gate_"):
        return config.gate_bits
    if parent == "att" and last in ATTENTION_WIDE_STAGES:
        return config.attention_bits
    return 8


class StageTable(dict):
    """A dictionary holding the calibrated QuantParams of a model's stages.

    Only calibrated stages live here; the fixed output grids of the PWL
    activations come from ``intrnn.pwl.output_qparams``.
    """

    def __getitem__(self, key):
        """Returns the QuantParams of a stage.

        Raises:
            ConversionError: if the stage was never calibrated.
        """
        try:
            return super(StageTable, self).__getitem__(key)
        except KeyError:
            raise ConversionError("no quantization parameters for stage {!r}".format(key))

    def __setitem__(self, key, value):
        """Sets the QuantParams of a stage.

        Raises:
            TypeError: if value is not a QuantParams.
        """
        if not isinstance(value, QuantParams):
            raise TypeError("stage {!r} needs QuantParams, not {}".format(
                key, type(value).__name__))
        super(StageTable, self).__setitem__(key, value)

    def view(self, prefix, overrides=None):
        """A read-only view resolving local names under prefix."""
        return StageView(self, prefix, overrides)

    def to_dict(self):
        return {key: qp.to_dict() for key, qp in sorted(self.items())}

    @classmethod
    def from_dict(cls, data):
        table = cls()
        try:
            for key, value in data.items():
                table[key] = QuantParams.from_dict(value)
        except (AttributeError, QuantizationError) as e:
            raise ConversionError("malformed quantization table: {}".format(e))
        return table


class StageView(object):
    """Local stage lookups into a StageTable, with optional overrides."""

    def __init__(self, table, prefix, overrides=None):
        self.table = table
        self.prefix = prefix
        self.overrides = dict(overrides or {})

    def __getitem__(self, name):
        if name in self.overrides:
            return self.overrides[name]
        return self.table["{}.{}".format(self.prefix, name) if self.prefix else name]

    def view(self, prefix, overrides=None):
        return StageView(self.table, "{}.{}".format(self.prefix, prefix) if self.prefix else prefix,
                         overrides)
