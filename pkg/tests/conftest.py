import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from splatmark.gsmodel import synth_scene  # noqa: E402
from splatmark.keying import KeySet  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# Fixed test keys shared with the golden vectors in the oracle tests.
FIXED_KEYS = KeySet(bytes(range(32)), bytes(range(32, 64)), bytes(range(64, 96)))


@pytest.fixture
def keys():
    return FIXED_KEYS


@pytest.fixture(scope="session")
def scene4096():
    return synth_scene(1, 4096, 3)


@pytest.fixture(scope="session")
def small_scene():
    return synth_scene(7, 300, 3)


def random_keys(seed: int) -> KeySet:
    return KeySet.generate(np.random.default_rng(seed))
