"""
Hooks for the lmpcurtail acceptance features. Each scenario gets its own
scratch directory for artifacts written with --out.

Official Behave documentation: https://behave.readthedocs.io/en/latest/api/#environment-file-functions
"""

import shutil
import sys
import tempfile
from pathlib import Path

from behave.model import Scenario
from behave.runner import Context

SUITE_ROOT = Path(__file__).absolute().parents[2]
if str(SUITE_ROOT) not in sys.path:
    sys.path.insert(0, str(SUITE_ROOT))


def before_scenario(context: Context, scenario: Scenario):
    """
    Executed before each scenario.
    """
    context.workdir = Path(tempfile.mkdtemp(prefix="lmpcurtail-"))
    context.case = None
    context.result = None


def after_scenario(context: Context, scenario: Scenario):
    """
    Executed after each scenario.
    """
    shutil.rmtree(context.workdir, ignore_errors=True)
