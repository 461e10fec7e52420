import io

import pandas as pd
from behave import then
from behave.runner import Context
from support import cli_steps  # noqa: F401  pylint: disable=unused-import


@then("the staircase CSV has the segments")
def step_then_segments(context: Context):
    """
    Then step comparing the staircase CSV against the scenario table
    (alpha_lo, alpha_hi, lmp).
    """
    frame = pd.read_csv(io.StringIO(context.result.stdout))
    assert list(frame.columns) == ["alpha_lo", "alpha_hi", "lmp"], f"Unexpected columns: {list(frame.columns)}"
    assert len(frame) == len(context.table.rows), f"Expected {len(context.table.rows)} segments, got {len(frame)}"
    for row, (_, segment) in zip(context.table, frame.iterrows()):
        for column in ("alpha_lo", "alpha_hi", "lmp"):
            want, got = float(row[column]), float(segment[column])
            assert abs(want - got) <= 1e-6, f"{column}: expected {want}, got {got}"


@then('the CSV at "{name}" has the columns "{columns}"')
def step_then_csv_columns(context: Context, name: str, columns: str):
    frame = pd.read_csv(context.workdir / name)
    assert list(frame.columns) == columns.split(), f"Unexpected columns: {list(frame.columns)}"


@then('the work directory holds the sidecar "{name}"')
def step_then_sidecar(context: Context, name: str):
    path = context.workdir / name
    assert path.is_file(), f"{path} was not written"
