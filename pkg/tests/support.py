"""Test utilities."""

import io
import json
import os
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from typing import Any, Dict, NamedTuple, Sequence

import pytest

FULL_SUITE_VARIABLE = "RUN_FULL_SUITE"

full_suite = pytest.mark.skipif(
    os.environ.get(FULL_SUITE_VARIABLE, "").lower() not in ("1", "true", "yes"),
    reason=f"full-size run, set {FULL_SUITE_VARIABLE}=1",
)
"""Marks a test that runs at full acceptance size and takes minutes."""


def get_project_root_dir() -> Path:
    """Return the absolute project root directory.

    Returns:
        Path: The absolute path to the project root.
    """
    return Path(__file__).parents[1].absolute()


def get_test_dir() -> Path:
    """Return the absolute path to the tests directory.

    Returns:
        Path: The absolute path to the tests directory.
    """
    return get_project_root_dir() / "tests"


class CliResult(NamedTuple):
    """Captured outcome of one in-process command line run."""

    exit_code: int
    stdout: str
    stderr: str

    def json(self) -> Dict[str, Any]:
        return json.loads(self.stdout)


def run_cli(args: Sequence[str]) -> CliResult:
    """Runs ``lmpcurtail`` in-process with captured output.

    Args:
        args (Sequence[str]): Command line arguments without the program name.

    Returns:
        CliResult: Exit code (argparse exits included) and captured streams.
    """
    from src.lmpcurtail.__main__ import main  # pylint: disable=import-outside-toplevel

    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            code = main(list(args))
        except SystemExit as exit_:
            code = exit_.code if isinstance(exit_.code, int) else (0 if exit_.code is None else 1)
    return CliResult(code, out.getvalue(), err.getvalue())
