from behave import then
from behave.runner import Context
from support import cli_steps  # noqa: F401  pylint: disable=unused-import


@then('the LMPs are "{values}"')
def step_then_lmps(context: Context, values: str):
    """
    Then step comparing every bus LMP of a clearing artifact, in bus order.
    """
    expected = [float(value) for value in values.split()]
    actual = context.result.json()["lmps"]
    assert len(actual) == len(expected), f"Expected {len(expected)} LMPs, got {len(actual)}"
    for position, (want, got) in enumerate(zip(expected, actual)):
        assert abs(want - got) <= 1e-6, f"LMP {position}: expected {want}, got {got}"


@then('the work directory holds "{name}"')
def step_then_file(context: Context, name: str):
    path = context.workdir / name
    assert path.is_file(), f"{path} was not written"
