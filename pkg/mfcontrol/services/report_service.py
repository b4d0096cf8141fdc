"""Report service writing run artifacts as JSON and CSV files."""

import csv
import json
import logging
from collections.abc import Callable, Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

TOOL_NAME = "mfcontrol"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _cell(value: Any) -> str:
    # repr keeps every float bit-exact on re-read
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


class ReportService:
    """Service writing report files under one output directory.

    Every artifact carries the same header: tool name, library version, the
    sha256 of the effective run configuration and a UTC timestamp. In CSV files
    the header is confined to the first line so table bodies stay
    byte-identical across reruns.
    """

    def __init__(
        self,
        output_dir: str | Path,
        version: str,
        config_sha256: str,
        table_format: str = "csv",
        clock: Callable[[], str] = _utc_now,
    ):
        """Initialize the report service.

        Args:
            output_dir: Directory receiving the artifacts (created on demand)
            version: Library version embedded in every header
            config_sha256: Hash of the effective run configuration
            table_format: "csv" or "json" for tabular artifacts
            clock: Source of the generated_at timestamp
        """
        self.output_dir = Path(output_dir)
        self.version = version
        self.config_sha256 = config_sha256
        self.table_format = table_format
        self.clock = clock
        self.logger = logging.getLogger(__name__)
        self.written: list[Path] = []

    def header(self) -> dict[str, str]:
        return {
            "tool": TOOL_NAME,
            "version": self.version,
            "config_sha256": self.config_sha256,
            "generated_at": self.clock(),
        }

    def _target(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        self.written.append(path)
        return path

    def write_json(self, name: str, payload: dict[str, Any]) -> Path:
        """Write {"header": ..., **payload} as indented JSON.

        Args:
            name: File name inside the output directory
            payload: JSON-serializable content (non-finite floats allowed)

        Returns:
            Path of the written file
        """
        path = self._target(name)
        document = {"header": self.header(), **payload}
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
        self.logger.info(f"Wrote {path}")
        return path

    def write_table(
        self, stem: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]
    ) -> Path:
        """Write a table as <stem>.csv or <stem>.json depending on the table format."""
        if self.table_format == "json":
            return self.write_json(
                f"{stem}.json", {"columns": list(columns), "rows": [list(r) for r in rows]}
            )
        path = self._target(f"{stem}.csv")
        header = self.header()
        with path.open("w", encoding="utf-8", newline="") as handle:
            handle.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(value) for value in row])
        self.logger.info(f"Wrote {path} ({len(rows)} rows)")
        return path


def read_json_report(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def read_csv_table(path: str | Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Parse a table written by ReportService into (header, columns, rows)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = {}
    for item in lines[0].lstrip("# ").split():
        key, _, value = item.partition("=")
        header[key] = value
    reader = csv.reader(lines[1:])
    columns = next(reader)
    return header, columns, list(reader)
