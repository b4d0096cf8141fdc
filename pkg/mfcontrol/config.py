"""
Centralized process configuration.

This module provides type-safe access to the environment variables that tune
the numerical engines (tolerances, worker threads, random block sizes, memory
guards) using Pydantic Settings. Configuration is loaded from the .env file
and validated at startup. Run-level parameters (systems, targets, tasks) live
in the RunConfig document parsed by the command-line front end.
"""

import logging
import os
from functools import lru_cache

# Explicitly load environment variables from .env file using dotenv
from dotenv import load_dotenv
from pydantic import model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load the .env file; variables already set in the environment win
load_dotenv()

DEFAULT_SEED = 20240601


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.

    Every field has a documented default so the toolkit runs without any
    environment at all; the .env file only overrides.
    """

    log_level: str = "INFO"

    # Reproducibility
    default_seed: int = DEFAULT_SEED

    # Particle simulation
    n_workers: int = 1  # Threads used over particle blocks
    particle_block_size: int = 4096  # Particles simulated per work item
    max_snapshots: int = 11  # Stored time slices when a full path dump is too large
    max_path_floats: int = 50_000_000  # Guard on path-shaped arrays held in memory

    # Quadrature and ODE tolerances
    quadrature_rel_tol: float = 1e-10
    quadrature_max_subintervals: int = 2**20
    ode_rtol: float = 1e-11
    ode_atol: float = 1e-13

    # Artifacts
    output_dir: str = "results"

    @model_validator(mode="after")
    def validate_ranges(self) -> "Settings":
        """Validate that counts and tolerances are usable."""
        positive_fields = [
            "n_workers",
            "particle_block_size",
            "max_snapshots",
            "max_path_floats",
            "quadrature_rel_tol",
            "quadrature_max_subintervals",
            "ode_rtol",
            "ode_atol",
        ]

        for field_name in positive_fields:
            if getattr(self, field_name) <= 0:
                raise ValueError(f"{field_name} must be positive")

        if self.max_snapshots < 2:
            raise ValueError("max_snapshots must keep at least the two end points")

        if logging.getLevelName(self.log_level.upper()) not in (
            logging.DEBUG,
            logging.INFO,
            logging.WARNING,
            logging.ERROR,
            logging.CRITICAL,
        ):
            raise ValueError(f"log_level {self.log_level!r} is not a logging level")

        return self

    model_config = SettingsConfigDict(
        env_file=os.getenv("ENV_FILE", ".env"),
        env_file_encoding="utf-8",
        extra="ignore",
    )


@lru_cache
def get_settings() -> Settings:
    """
    Get cached settings instance.

    This function uses @lru_cache() to ensure Settings is instantiated
    only once (singleton pattern), keeping tolerances consistent across
    every module of a run.

    Returns:
        Settings: The process settings instance

    Raises:
        ValidationError: If environment variables have invalid values
    """
    return Settings()
