"""Conversion settings."""
from dataclasses import asdict, dataclass, fields

from intrnn.errors import ConversionError, PwlError
from intrnn.pwl import PWL16_CANDIDATES


@dataclass(frozen=True)
class ConvertConfig(object):
    """How a float model is turned into an integer model.

    Attributes:
        pieces (int): PWL pieces for sigmoid and tanh tables.
        exp_pieces (int): PWL pieces for the attention exponential.
        cell_bits (int): bit width of the cell state and its products, 8 or 16.
        gate_bits (int): bit width of the gate pre-activations, 8 or 16.
        attention_bits (int): bit width of the alignment stages, always 16.
        pwl16_candidates (int): starting knots for PWLs over 16-bit inputs.
    """
    pieces: int = 32
    exp_pieces: int = 32
    cell_bits: int = 16
    gate_bits: int = 8
    attention_bits: int = 16
    pwl16_candidates: int = PWL16_CANDIDATES

    def __post_init__(self):
        if self.pieces < 1 or self.exp_pieces < 1:
            raise PwlError("piece counts must be positive")
        if self.cell_bits not in (8, 16) or self.gate_bits not in (8, 16):
            raise ConversionError("cell and gate bits must be 8 or 16")
        if self.attention_bits != 16:
            raise ConversionError("attention alignments are always 16-bit")
        if self.pwl16_candidates < 2:
            raise PwlError("16-bit PWLs need at least two candidate knots")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{key: int(value) for key, value in data.items() if key in names})
