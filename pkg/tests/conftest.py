import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from torusot.pressure import Amplitude, Mode, PressureSpec, zero_pressure
from torusot.transport import DiscreteMeasure

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def P0():
    return zero_pressure(1)


@pytest.fixture
def Pmode():
    """0.1 cos(2 pi x) cos(pi t)."""
    return PressureSpec(1, (Mode((1,), Amplitude.cosine(0.1, math.pi)),))


@pytest.fixture
def two_atoms():
    return (
        DiscreteMeasure.create([[0.25], [0.5]], [0.5, 0.5]),
        DiscreteMeasure.create([[0.375], [0.75]], [0.5, 0.5]),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
