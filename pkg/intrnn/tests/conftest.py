"""Shared fixtures of the intrnn tests."""
import numpy as np
import pytest

from intrnn.runtime.config import ConvertConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config():
    return ConvertConfig()
