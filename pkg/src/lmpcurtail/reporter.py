"""Artifact emission for the command line: JSON records and CSV tables."""

import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, TextIO

import numpy as np
import pandas as pd

from .exceptions import ConfigError

__all__ = ["Artifact", "to_json", "to_csv", "sidecar_path", "write_artifact"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Artifact:
    """Output of one command.

    ``record`` is always available as JSON. Commands with tabular output also
    set ``table``; ``sidecar`` is written next to a CSV file when present.
    """

    command: str
    record: Dict[str, Any]
    table: Optional[pd.DataFrame] = None
    sidecar: Optional[Dict[str, Any]] = None


def _builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def to_json(record: Dict[str, Any]) -> str:
    return json.dumps(record, indent=2, default=_builtin) + "\n"


def to_csv(table: pd.DataFrame) -> str:
    return table.to_csv(index=False, lineterminator="\n", float_format="%.12g")


def sidecar_path(out: Path) -> Path:
    """``grow.csv`` -> ``grow.sidecar.json``."""
    return out.with_suffix(".sidecar.json")


def write_artifact(artifact: Artifact, fmt: str, out: Optional[Path] = None, stream: Optional[TextIO] = None) -> None:
    """Writes ``artifact`` as ``fmt`` to ``out``, or to ``stream`` (stdout) when no path is given.

    Raises:
        ConfigError: If CSV is requested for a command without tabular output.
    """
    if fmt == "csv":
        if artifact.table is None:
            raise ConfigError(f"{artifact.command} has no CSV output, use --format json")
        text = to_csv(artifact.table)
    else:
        text = to_json(artifact.record)

    if out is None:
        (stream or sys.stdout).write(text)
        if fmt == "csv" and artifact.sidecar is not None:
            logger.info("sidecar of %s is only written together with --out", artifact.command)
        return

    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    logger.info("wrote %s", out)
    if fmt == "csv" and artifact.sidecar is not None:
        target = sidecar_path(out)
        target.write_text(to_json(artifact.sidecar), encoding="utf-8")
        logger.info("wrote %s", target)
