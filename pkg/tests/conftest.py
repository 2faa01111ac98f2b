import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridsnn.events import EventStream

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_stream(rng, n, width=16, height=12, t_max=100_000):
    t = np.sort(rng.integers(0, t_max, n))
    return EventStream(t, rng.integers(0, width, n), rng.integers(0, height, n), rng.integers(0, 2, n), width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
