from intrnn.quant_core import QuantParams, compute_qparams, quantize, dequantize
from intrnn.pwl import PwlTable, build_pwl
from intrnn.runtime import (FloatModel, IntegerModel, ConvertConfig, calibrate, convert,
                            load, save)
__all__ = ["QuantParams", "compute_qparams", "quantize", "dequantize",
           "PwlTable", "build_pwl",
           "FloatModel", "IntegerModel", "ConvertConfig", "calibrate", "convert", "load", "save"]
