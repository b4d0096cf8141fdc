"""Fixtures shared by the acceptance-scale integration tests."""

import numpy as np
import pytest

from mfcontrol.config import Settings


@pytest.fixture
def integration_settings() -> Settings:
    """Defaults with two worker threads."""
    return Settings(_env_file=None, n_workers=2)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for drawing random systems and targets."""
    return np.random.default_rng(20240601)
