"""Exceptions raised throughout the intrnn package.

Every error derives from IntRnnError and from the builtin it refines, so
callers may catch either ``IntRnnError`` or e.g. ``ValueError``.
"""


class IntRnnError(Exception):
    """Base class of all intrnn errors."""


class QuantizationError(IntRnnError, ValueError):
    """Invalid quantization parameters, ranges or multipliers."""


class PwlError(IntRnnError, ValueError):
    """A piecewise linear table was requested with an invalid layout."""


class ShapeError(IntRnnError, ValueError):
    """Tensor dimensions do not agree."""


class CalibrationError(IntRnnError, ValueError):
    """Calibration could not produce usable quantization parameters.

    Attributes:
        stages (list): names of the offending stages.
    """

    def __init__(self, message, stages=()):
        self.stages = sorted(stages)
        if self.stages:
            message = "{}: {}".format(message, ", ".join(self.stages))
        super(CalibrationError, self).__init__(message)


class ConversionError(IntRnnError, KeyError):
    """A float model could not be turned into an integer model."""

    def __str__(self):
        # KeyError quotes its argument, keep the plain message instead.
        return Exception.__str__(self)


class ManifestError(IntRnnError, IOError):
    """A serialized model is malformed, truncated or inconsistent."""


class InputError(IntRnnError, ValueError):
    """An input sequence cannot be fed to a model."""
