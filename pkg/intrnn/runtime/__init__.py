"""Model assembly, calibration, conversion and serialization."""
from intrnn.runtime.calibration import CalibrationObserver, calibrate
from intrnn.runtime.config import ConvertConfig
from intrnn.runtime.convert import convert
from intrnn.runtime.manifest import ModelManifest, load, save
from intrnn.runtime.model import FloatModel, IntegerModel
from intrnn.runtime.stages import StageTable

__all__ = ["CalibrationObserver", "calibrate", "ConvertConfig", "convert", "ModelManifest",
           "load", "save", "FloatModel", "IntegerModel", "StageTable"]
