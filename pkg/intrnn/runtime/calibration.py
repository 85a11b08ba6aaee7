"""Range calibration: running min/max per stage over a float model's runs."""
import logging

import numpy as np

from intrnn.errors import CalibrationError, QuantizationError
from intrnn.quant_core import compute_qparams
from intrnn.runtime.stages import StageTable, stage_bitwidth

logger = logging.getLogger(__name__)


class CalibrationObserver(object):
    """Running absolute min and max of every observed stage.

    Stages are keyed by dotted names; ``scoped`` hands out an observer that
    prefixes every name it records. Each stage has a single writer.
    """

    def __init__(self):
        self.ranges = {}

    def observe(self, stage, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return
        low, high = float(values.min()), float(values.max())
        if stage in self.ranges:
            old_low, old_high = self.ranges[stage]
            low, high = min(low, old_low), max(high, old_high)
        self.ranges[stage] = (low, high)

    def scoped(self, prefix):
        return ScopedObserver(self, prefix)

    def __contains__(self, stage):
        return stage in self.ranges

    def qparams(self, stage, bitwidth=8):
        """QuantParams of an observed stage.

        Raises:
            CalibrationError: if the stage was never observed or its range
                is degenerate.
        """
        if stage not in self.ranges:
            raise CalibrationError("stage never observed", [stage])
        try:
            return compute_qparams(self.ranges[stage][0], self.ranges[stage][1], bitwidth)
        except QuantizationError as e:
            raise CalibrationError("unusable range ({})".format(e), [stage])


class ScopedObserver(object):
    """Forwards observations to a parent under a name prefix."""

    def __init__(self, parent, prefix):
        self.parent = parent
        self.prefix = prefix

    def observe(self, stage, values):
        self.parent.observe("{}.{}".format(self.prefix, stage), values)

    def scoped(self, prefix):
        return ScopedObserver(self.parent, "{}.{}".format(self.prefix, prefix))


def calibrate(float_model, batches, config):
    """Runs float_model over every batch and derives per-stage QuantParams.

    Args:
        float_model (FloatModel): the float reference network.
        batches (iterable): input sequences (token ids or feature frames).
        config (ConvertConfig): supplies the bit width of each stage.

    Returns:
        StageTable: QuantParams of every stage the model needs.

    Raises:
        CalibrationError: if no batch was given, or listing every stage that
            was never observed or has a degenerate range.
    """
    observer = CalibrationObserver()
    count = 0
    for batch in batches:
        float_model.forward(batch, observer)
        count += 1
    if count == 0:
        raise CalibrationError("calibration needs at least one batch")
    logger.info("calibrated on %d batches, %d stages observed", count, len(observer.ranges))
    table = StageTable()
    bad = []
    for stage in float_model.required_stages():
        try:
            table[stage] = observer.qparams(stage, stage_bitwidth(stage, config))
        except CalibrationError as e:
            bad.extend(e.stages)
            continue
        low, high = observer.ranges[stage]
        logger.debug("stage %s: min %g, max %g", stage, low, high)
    if bad:
        raise CalibrationError("unusable calibration", bad)
    return table
