"""
Unit tests for the config module.

Tests cover Settings class validation, environment variable handling,
and singleton behavior of get_settings() function.
"""
# mypy: disable-error-code="call-arg"

import os
from collections.abc import Generator
from typing import Any

import pytest
from pydantic import ValidationError

from mfcontrol.config import DEFAULT_SEED, Settings, get_settings


def _get_env_vars_to_clear() -> list[str]:
    """Upper-case environment variable names of every Settings field."""
    return [field_name.upper() for field_name in Settings.model_fields]


@pytest.fixture(autouse=True)
def clear_env_vars() -> Generator[None, None, None]:
    """
    Clear environment variables before each test and restore them after.

    This fixture ensures test isolation by:
    1. Forcing ENV_FILE to .env.test (never use real .env)
    2. Clearing all Settings-related environment variables
    3. Clearing the settings cache
    """
    os.environ["ENV_FILE"] = ".env.test"
    env_vars_to_clear = _get_env_vars_to_clear()
    saved = {key: os.environ.pop(key) for key in env_vars_to_clear if key in os.environ}
    get_settings.cache_clear()

    yield

    for key in env_vars_to_clear:
        os.environ.pop(key, None)
    os.environ.update(saved)
    os.environ["ENV_FILE"] = ".env.test"
    get_settings.cache_clear()


class TestSettingsClass:
    """Test cases for the Settings class."""

    def test_defaults_without_env_file(self) -> None:
        """Every field has a usable default."""
        settings = Settings(_env_file=None)

        assert settings.log_level == "INFO"
        assert settings.default_seed == DEFAULT_SEED == 20240601
        assert settings.n_workers == 1
        assert settings.particle_block_size == 4096
        assert settings.max_snapshots == 11
        assert settings.max_path_floats == 50_000_000
        assert settings.quadrature_max_subintervals == 2**20
        assert settings.output_dir == "results"

    def test_env_vars_are_read(self) -> None:
        """Environment variables override defaults."""
        os.environ["N_WORKERS"] = "8"
        os.environ["ODE_RTOL"] = "1e-9"
        os.environ["OUTPUT_DIR"] = "/tmp/mf"

        settings = Settings(_env_file=None)

        assert settings.n_workers == 8
        assert settings.ode_rtol == pytest.approx(1e-9)
        assert settings.output_dir == "/tmp/mf"

    def test_case_insensitive_env_vars(self) -> None:
        """Lower-case variable names are accepted."""
        os.environ["max_snapshots"] = "5"
        try:
            settings = Settings(_env_file=None)
            assert settings.max_snapshots == 5
        finally:
            os.environ.pop("max_snapshots", None)

    @pytest.mark.parametrize(
        "field,value",
        [
            ("N_WORKERS", "0"),
            ("PARTICLE_BLOCK_SIZE", "-1"),
            ("QUADRATURE_REL_TOL", "0"),
            ("ODE_ATOL", "-1e-3"),
            ("MAX_PATH_FLOATS", "0"),
        ],
    )
    def test_non_positive_values_rejected(self, field: str, value: str) -> None:
        """Counts and tolerances must be positive."""
        os.environ[field] = value

        with pytest.raises(ValidationError, match="must be positive"):
            Settings(_env_file=None)

    def test_single_snapshot_rejected(self) -> None:
        """Snapshots must keep both end points."""
        os.environ["MAX_SNAPSHOTS"] = "1"

        with pytest.raises(ValidationError, match="two end points"):
            Settings(_env_file=None)

    def test_unknown_log_level_rejected(self) -> None:
        """Log level must name a logging level."""
        os.environ["LOG_LEVEL"] = "CHATTY"

        with pytest.raises(ValidationError, match="not a logging level"):
            Settings(_env_file=None)

    def test_lower_case_log_level_accepted(self) -> None:
        """Log levels are matched case-insensitively."""
        os.environ["LOG_LEVEL"] = "warning"

        assert Settings(_env_file=None).log_level == "warning"

    def test_type_validation(self) -> None:
        """Non-numeric counts are rejected."""
        os.environ["N_WORKERS"] = "many"

        with pytest.raises(ValidationError):
            Settings(_env_file=None)


class TestGetSettings:
    """Test cases for the get_settings() function."""

    def test_get_settings_singleton_behavior(self) -> None:
        """get_settings() returns the same instance (singleton pattern)."""
        settings1 = get_settings()
        settings2 = get_settings()

        assert settings1 is settings2

    def test_get_settings_cache_clearing(self) -> None:
        """Clearing the cache creates a new instance with the same values."""
        settings1 = get_settings()
        get_settings.cache_clear()
        settings2 = get_settings()

        assert settings1 is not settings2
        assert settings1.model_dump() == settings2.model_dump()

    def test_settings_uses_env_test_file(self) -> None:
        """The test env file is loaded when no variables are set."""
        settings = get_settings()

        assert settings.log_level == "DEBUG"
        assert settings.default_seed == DEFAULT_SEED
        assert settings.n_workers == 1


class TestSettingsIntegration:
    """Integration tests for Settings class behavior."""

    def test_env_vars_override_dotenv_file(self, tmp_path: Any) -> None:
        """Environment variables take precedence over the env file."""
        env_file = tmp_path / ".env"
        env_file.write_text("N_WORKERS=3\nMAX_SNAPSHOTS=4\n")
        os.environ["N_WORKERS"] = "6"

        settings = Settings(_env_file=str(env_file))

        assert settings.n_workers == 6
        assert settings.max_snapshots == 4

    def test_unknown_keys_in_env_file_are_ignored(self, tmp_path: Any) -> None:
        """extra="ignore" tolerates unrelated entries."""
        env_file = tmp_path / ".env"
        env_file.write_text("SOMETHING_ELSE=1\nDEFAULT_SEED=7\n")

        settings = Settings(_env_file=str(env_file))

        assert settings.default_seed == 7
