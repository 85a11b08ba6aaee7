"""Helpers shared by the intrnn tests."""
import pytest

from intrnn.runtime.calibration import CalibrationObserver
from intrnn.runtime.stages import StageTable, stage_bitwidth


def calibrate_stages(run, names, config):
    """Observes run(observer) and returns a StageTable holding names.

    run receives a CalibrationObserver and must report every name.
    """
    observer = CalibrationObserver()
    run(observer)
    table = StageTable()
    for name in names:
        table[name] = observer.qparams(name, stage_bitwidth(name, config))
    return table


def assert_pinned(cache, key, value, rel=1e-9):
    """Compares value with the one recorded under key by the first run.

    The first run stores value in the pytest cache and passes; later runs
    fail when value drifts from it.
    """
    key = "intrnn/pinned/" + key
    stored = cache.get(key, None)
    if stored is None:
        cache.set(key, float(value))
        return
    assert value == pytest.approx(stored, rel=rel), "{} moved from {}".format(value, stored)
