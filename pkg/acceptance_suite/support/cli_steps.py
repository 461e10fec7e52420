"""Step definitions shared by every lmpcurtail feature area."""

import math
from typing import Any

from behave import given, then, when
from behave.runner import Context

from support.cli_support import run_cli, split_args


def artifact_value(document: Any, path: str) -> Any:
    """Follows a dotted path such as ``lmps.1`` or ``duals.gen_lo.0`` into a JSON document."""
    value = document
    for part in path.split("."):
        value = value[int(part)] if isinstance(value, list) else value[part]
    return value


@given('the bundled case "{name}"')
def step_given_case(context: Context, name: str):
    """
    Given step selecting the case every later command runs on.
    """
    context.case = name


@when('I run "{command}" with "{args}"')
def step_when_run_with(context: Context, command: str, args: str):
    """
    When step running a command with extra flags. ``{workdir}`` in the flags
    expands to the scenario's scratch directory.
    """
    context.result = run_cli([command, "--case", context.case, *split_args(args, workdir=context.workdir)])


@when('I run "{command}"')
def step_when_run(context: Context, command: str):
    context.result = run_cli([command, "--case", context.case])


@then("the command exits with {code:d}")
def step_then_exit_code(context: Context, code: int):
    actual = context.result.exit_code
    assert actual == code, f"Exit code mismatch. Expected: {code}, Actual: {actual}\n{context.result.stderr}"


@then('stderr mentions "{text}"')
def step_then_stderr(context: Context, text: str):
    assert text in context.result.stderr, f"'{text}' not found in stderr: {context.result.stderr!r}"


@then('the artifact field "{path}" is {expected:g}')
def step_then_field(context: Context, path: str, expected: float):
    actual = artifact_value(context.result.json(), path)
    assert math.isclose(actual, expected, rel_tol=1e-6, abs_tol=1e-6), f"{path}: expected {expected}, got {actual}"


@then('the artifact field "{path}" is within {tolerance:g} of {expected:g}')
def step_then_field_within(context: Context, path: str, tolerance: float, expected: float):
    actual = artifact_value(context.result.json(), path)
    assert abs(actual - expected) <= tolerance, f"{path}: expected {expected} +- {tolerance}, got {actual}"


@then('the artifact flag "{path}" is "{expected}"')
def step_then_flag(context: Context, path: str, expected: str):
    actual = artifact_value(context.result.json(), path)
    assert actual is (expected.lower() == "true"), f"{path}: expected {expected}, got {actual}"
