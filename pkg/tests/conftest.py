"""Pytest configuration."""

import logging
import sys

import pytest

from support import get_project_root_dir, get_test_dir

sys.path.append(str(get_project_root_dir()))
sys.path.append(str(get_test_dir()))

from src.lmpcurtail.cases import load_bundled  # noqa: E402  pylint: disable=wrong-import-position
from src.lmpcurtail.model import Network  # noqa: E402  pylint: disable=wrong-import-position


@pytest.fixture(autouse=True)
def _restore_root_logger():
    """Restore root logger state after tests that run the CLI in-process."""
    root = logging.getLogger()
    level, handlers = root.level, root.handlers[:]
    yield
    root.setLevel(level)
    root.handlers[:] = handlers


@pytest.fixture
def two_bus() -> Network:
    """Two buses, one congested line, 10 MW of aggregator generation at bus 1."""
    return load_bundled("two_bus")


@pytest.fixture
def six_bus() -> Network:
    """Radial six-bus case whose bus 1 staircase has a profitable late jump."""
    return load_bundled("six_bus")


@pytest.fixture
def ring3() -> Network:
    """Three-bus ring with uniform reactances."""
    return load_bundled("ring3")
