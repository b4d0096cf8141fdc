"""
Pytest configuration file for setting up test environment.

This file is loaded before any test modules and sets up the test environment
to use .env.test instead of .env for testing.
"""

import os

import numpy as np
import pytest

# Set test environment file BEFORE any imports that could trigger config loading
os.environ["ENV_FILE"] = ".env.test"

from mfcontrol.analysis import MeanFieldSystem  # noqa: E402
from mfcontrol.config import Settings  # noqa: E402


@pytest.fixture
def default_settings() -> Settings:
    """Settings built from defaults only, independent of any env file."""
    return Settings(_env_file=None)


@pytest.fixture
def scalar_noise_system() -> MeanFieldSystem:
    """d = n = 1, A1 = 0, D2 = 1, T = 1: every normal law is reachable."""
    return MeanFieldSystem(d=1, n=1, T=1.0, D2=[[1.0]])


@pytest.fixture
def rotation_system() -> MeanFieldSystem:
    """d = n = 2 rotation drift with B2 = D2 = I."""
    return MeanFieldSystem(
        d=2,
        n=2,
        T=1.0,
        A1=[[0.0, 1.0], [-1.0, 0.0]],
        B2=np.eye(2),
        D2=np.eye(2),
    )
