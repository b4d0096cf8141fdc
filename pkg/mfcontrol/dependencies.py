"""
Dependency injection functions.

This module provides individual getter functions for each service used by
the command-line front end. Each function returns a single entity, so tests
can build any service in isolation with their own settings.
"""

from pathlib import Path

from mfcontrol import __version__
from mfcontrol.config import Settings, get_settings
from mfcontrol.services.report_service import ReportService
from mfcontrol.services.repro_service import ReproService, default_catalog
from mfcontrol.services.task_service import TaskService


def get_config() -> Settings:
    """
    Get process configuration.

    Note: Caching is handled by get_settings() in mfcontrol.config,
    so no additional caching is needed here.

    Returns:
        Settings: The process settings instance
    """
    return get_settings()


def get_report_service(
    output_dir: str | Path, config_sha256: str, table_format: str = "csv"
) -> ReportService:
    """
    Get a report service writing into one run directory.

    Returns:
        ReportService: Writer stamped with the library version and config hash
    """
    return ReportService(
        output_dir=output_dir,
        version=__version__,
        config_sha256=config_sha256,
        table_format=table_format,
    )


def get_repro_service(settings: Settings | None = None) -> ReproService:
    """
    Get the repro service over the built-in case catalog.

    Returns:
        ReproService: Service running the default catalog
    """
    return ReproService(default_catalog(), settings or get_config())


def get_task_service(report_service: ReportService) -> TaskService:
    """
    Get the task service.

    Returns:
        TaskService: Dispatcher writing through the given report service
    """
    settings = get_config()
    return TaskService(
        settings=settings,
        report_service=report_service,
        repro_service=get_repro_service(settings),
    )
