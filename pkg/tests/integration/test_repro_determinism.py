"""Integration tests for the full repro catalog."""

from pathlib import Path

import pytest

from mfcontrol.cli import run_command


def _body(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()[1:]


@pytest.mark.slow
class TestReproCatalog:
    """Full catalog runs through the command-line front end."""

    def test_all_cases_pass(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test that every catalog check passes with the default seed."""
        assert run_command(["repro", "--out", str(tmp_path)]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_bodies_identical_across_thread_counts(self, tmp_path: Path) -> None:
        """Test byte-identical CSV bodies for 1, 4 and 8 worker threads."""
        bodies = []
        for workers in (1, 4, 8):
            out = tmp_path / f"workers-{workers}"
            run_command(["repro", "--out", str(out), "--workers", str(workers)])
            bodies.append(_body(out / "repro.csv"))

        assert bodies[0] == bodies[1] == bodies[2]
        assert len(bodies[0]) > 1
