import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tvstergm.synth import generate_synthetic

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixture30():
    """The standard 30-actor, 40-period synthetic fixture."""
    return generate_synthetic()


@pytest.fixture(scope="session")
def small_fixture():
    return generate_synthetic(n_actors=10, n_periods=12, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
