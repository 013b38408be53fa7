import numpy as np
import pytest

from telltale.patterns import PatternConfig, reference_bundle


@pytest.fixture(scope="session")
def refs128():
    """Reference watermark bundle at the standard experiment size."""
    return reference_bundle(PatternConfig(height=128, width=128))


@pytest.fixture(scope="session")
def refs64():
    return reference_bundle(PatternConfig(height=64, width=64))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
