"""Runs the lmpcurtail command line in-process for the feature steps."""

import io
import json
import shlex
import sys
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Sequence

PROJECT_ROOT = Path(__file__).absolute().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.append(str(PROJECT_ROOT))

from src.lmpcurtail.__main__ import main  # noqa: E402  pylint: disable=wrong-import-position


class CliResult(NamedTuple):
    exit_code: int
    stdout: str
    stderr: str

    def json(self) -> Dict[str, Any]:
        return json.loads(self.stdout)


def run_cli(args: Sequence[str]) -> CliResult:
    """Calls ``main(args)`` with captured output; argparse exits become exit codes."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            code = main(list(args))
        except SystemExit as exit_:
            code = exit_.code if isinstance(exit_.code, int) else (0 if exit_.code is None else 1)
    return CliResult(code, out.getvalue(), err.getvalue())


def split_args(text: str, **paths: Path) -> List[str]:
    """Splits a step's argument string, filling ``{name}`` placeholders with ``paths``."""
    return shlex.split(text.format(**{name: str(path) for name, path in paths.items()}))
