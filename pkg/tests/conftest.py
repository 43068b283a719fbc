import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Single-core box: generous deadlines, moderate example counts.
settings.register_profile(
    "slowbox",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("slowbox")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
