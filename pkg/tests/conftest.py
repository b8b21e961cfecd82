import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def nprng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """A small synthetic dataset shared by harness and CLI tests."""
    from drkit.data import SyntheticSpec, generate_synthetic

    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic(SyntheticSpec(image_side=64, split_sizes=(60, 30, 30), seed=3), root)
    return root
