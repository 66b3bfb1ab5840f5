import numpy as np
import pytest

from probcast.data import build_features
from probcast.synthetic import SyntheticSpec, make_synthetic


@pytest.fixture(scope="session")
def series_220():
    """A 220-day synthetic market series shared across test modules."""
    return make_synthetic(SyntheticSpec(n_days=220), seed=3)


@pytest.fixture(scope="session")
def dataset_220(series_220):
    return build_features(series_220)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
