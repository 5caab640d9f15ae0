import numpy as np
import pytest
from hypothesis import settings

from handfusion.data.synthetic import generate_in_memory
from handfusion.topology import default_topology

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture(scope="session")
def samples(topo):
    """Four synthetic frames at 192 px; treat as read-only."""
    return generate_in_memory(3, 4, topo=topo)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
