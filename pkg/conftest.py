# conftest.py
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from data_io import SyntheticConfig, generate_synthetic  # noqa: E402
from main import build_gradcheck_model, random_batch  # noqa: E402

SEED = 12334567


@pytest.fixture
def rng():
    """Generator o stałym ziarnie - te same liczby przy każdym uruchomieniu."""
    return np.random.default_rng(SEED)


@pytest.fixture
def tiny_model():
    return build_gradcheck_model(d_model=8, n_heads=2, d_common=8, d_text=12, d_visual=10, seed=3)


@pytest.fixture
def tiny_batch(tiny_model):
    return random_batch(tiny_model, n=2, seed=3)


@pytest.fixture
def small_dataset():
    return generate_synthetic(SyntheticConfig(n_per_class_per_target=10, targets=['A', 'B'],
                                              d_text=12, d_visual=10, seed=5))
