"""Debug instrumentation counting floating-point values on the integer path.

The integer kernels report every array they consume or produce to
``check_integer``, and the float helpers report their own work to
``record_float``. When instrumentation is enabled, any floating-point
element (a numpy float/complex dtype, or a non-integral Python object in an
object array) is counted as one floating-point operation. An integer-only
model run must leave the counter at zero.

Instrumentation is off by default. Set ``INTRNN_COUNT_FLOATS=1`` in the
environment, or wrap code in ``count_float_ops()``.
"""
import os
import numbers
import threading
from contextlib import contextmanager

import numpy as np

ENV_VAR = "INTRNN_COUNT_FLOATS"


class FloatOpCounter(threading.local):
    """Per-thread counter of floating-point values seen by integer kernels."""

    def __init__(self):
        self.enabled = os.environ.get(ENV_VAR, "") not in ("", "0")
        self.count = 0
        self.sites = {}

    def record(self, site, amount):
        self.count += amount
        self.sites[site] = self.sites.get(site, 0) + amount

    def reset(self):
        self.count = 0
        self.sites = {}


counter = FloatOpCounter()


def _float_elements(value):
    arr = np.asarray(value)
    kind = arr.dtype.kind
    if kind in "fc":
        return arr.size
    if kind == "O":
        return sum(1 for v in arr.flat if not isinstance(v, numbers.Integral))
    return 0


def check_integer(site, *values):
    """Counts floating-point elements in values when instrumentation is on.

    Args:
        site (str): name of the kernel reporting the values.
        *values: arrays or scalars consumed or produced by the kernel.
    """
    if not counter.enabled:
        return
    found = sum(_float_elements(v) for v in values)
    if found:
        counter.record(site, found)


def record_float(site, *values):
    """Counts every element of values as floating-point work.

    Called by the float helpers themselves, so that float work reached from
    an integer run shows up even when its outputs are integers again.
    """
    if not counter.enabled:
        return
    found = sum(np.size(v) for v in values)
    if found:
        counter.record(site, found)


@contextmanager
def count_float_ops():
    """Enables instrumentation for the enclosed block.

    Yields the (reset) counter, whose ``count`` can be read afterwards.
        with count_float_ops() as floats:
            model.run(tokens)
        assert floats.count == 0
    """
    previous = counter.enabled
    counter.enabled = True
    counter.reset()
    try:
        yield counter
    finally:
        counter.enabled = previous
