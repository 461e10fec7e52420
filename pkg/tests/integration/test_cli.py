"""Integration tests for the lmpcurtail command line."""

import json
import os
from pathlib import Path

import pytest

from src.lmpcurtail.constants import VERSION
from support import run_cli


@pytest.fixture(autouse=True)
def isolated_home(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Runs every test with an empty home directory and no LMPCURTAIL_* variables.

    Args:
        tmp_path (Path): Temporary directory.
        monkeypatch (pytest.MonkeyPatch): Environment patching.

    Returns:
        Path: The temporary home directory.
    """
    home = tmp_path / "home"
    home.mkdir()
    monkeypatch.setenv("HOME", str(home))
    monkeypatch.delenv("_LMPCURTAIL_SOURCE", raising=False)
    for key in [key for key in os.environ if key.lower().startswith("lmpcurtail_")]:
        monkeypatch.delenv(key)
    return home


class TestCommands:
    """One successful run of each command on the bundled cases."""

    def test_version(self):
        """Test that --version prints the banner and exits 0."""
        result = run_cli(["--version"])
        assert result.exit_code == 0, f"Unexpected exit code {result.exit_code}: {result.stderr}"
        assert result.stdout.strip() == f"lmpcurtail {VERSION}", f"Unexpected banner {result.stdout!r}"

    def test_clear_json(self):
        """Test the clearing record of the two-bus case."""
        result = run_cli(["clear", "--case", "two_bus"])
        assert result.exit_code == 0, result.stderr
        record = result.json()
        assert record["lmps"] == pytest.approx([10.0, 20.0]), f"Unexpected LMPs {record['lmps']}"
        assert record["bus_ids"] == [1, 2], "Bus order missing from the record."
        assert record["command"] == "clear", "Command missing from the record."

    def test_clear_with_curtailment(self):
        """Test curtailment given with --bus and --alpha."""
        record = run_cli(["clear", "--case", "two_bus", "--bus", "1", "--alpha", "0.15"]).json()
        assert record["lmps"] == pytest.approx([20.0, 20.0]), f"Unexpected LMPs {record['lmps']}"
        assert record["alpha"] == pytest.approx([0.15, 0.0]), "Curtailment not applied to bus 1."

    def test_scale_demand(self):
        """Test that --scale-demand overrides the case factor."""
        record = run_cli(["clear", "--case", "two_bus", "--scale-demand", "1.01"]).json()
        assert record["demand_scale"] == pytest.approx(1.01), "Scale factor not recorded."

    def test_staircase_defaults_to_csv(self):
        """Test that the staircase is a CSV table unless JSON is requested."""
        result = run_cli(["staircase", "--case", "six_bus", "--bus", "1"])
        assert result.exit_code == 0, result.stderr
        lines = result.stdout.splitlines()
        assert lines[0] == "alpha_lo,alpha_hi,lmp", f"Unexpected header {lines[0]}"
        assert len(lines) == 6, f"Expected five segments, got {len(lines) - 1}"

        record = run_cli(["staircase", "--case", "six_bus", "--bus", "1", "--format", "json"]).json()
        assert record["jump_points"] == pytest.approx([0.15, 1.25, 3.35, 5.45, 5.5]), "Unexpected jumps."

    def test_curtail_single(self):
        """Test the exact single-bus optimum of the six-bus case."""
        record = run_cli(["curtail-single", "--case", "six_bus", "--bus", "1"]).json()
        assert record["alpha_star"] == pytest.approx(5.45), f"Unexpected alpha* {record['alpha_star']}"
        assert record["profit"] == pytest.approx(1309.25), f"Unexpected profit {record['profit']}"

    def test_curtail_tree(self):
        """Test the DP record on the two-bus case, including the exact profit check."""
        record = run_cli(["curtail-tree", "--case", "two_bus", "--eps", "0.5"]).json()
        assert record["delta"] == pytest.approx(0.125), f"Unexpected spacing {record['delta']}"
        assert record["profit"] == pytest.approx(98.0, abs=0.5), f"Unexpected profit {record['profit']}"
        assert record["exact_profit"] is not None, "The DP curtailment should clear exactly."

    def test_grow_writes_sidecar(self, tmp_path: Path):
        """Test the growth table and its sidecar.

        Args:
            tmp_path (Path): Temporary directory.
        """
        out = tmp_path / "grow.csv"
        result = run_cli(["grow", "--case", "six_bus", "--seed", "3", "--sizes", "0", "1", "2", "--out", str(out)])
        assert result.exit_code == 0, result.stderr
        assert result.stdout == "", "Nothing should be printed when --out is given."
        header = out.read_text(encoding="utf-8").splitlines()[0]
        assert header == "k,baseline_profit,strategic_profit,curtailment_profit,greedy", f"Unexpected header {header}"
        sidecar = json.loads((tmp_path / "grow.sidecar.json").read_text(encoding="utf-8"))
        assert sidecar["seed"] == 3 and sidecar["sizes"] == [0, 1, 2], f"Unexpected sidecar {sidecar}"

    def test_deterministic_output(self):
        """Test that two identical runs produce byte-identical artifacts."""
        args = ["brute-force", "--case", "two_bus", "--resolution", "20"]
        assert run_cli(args).stdout == run_cli(args).stdout, "Repeated runs differ."


class TestCheckKkt:
    """Round trips through a stored market outcome."""

    def test_stored_outcome_passes(self, tmp_path: Path):
        """Test that an outcome written by clear passes check-kkt.

        Args:
            tmp_path (Path): Temporary directory.
        """
        outcome = tmp_path / "outcome.json"
        assert run_cli(["clear", "--case", "six_bus", "--out", str(outcome)]).exit_code == 0, "clear failed."

        result = run_cli(["check-kkt", "--case", "six_bus", "--outcome", str(outcome)])
        assert result.exit_code == 0, result.stderr
        assert result.json()["passed"] is True, "Stored outcome failed the KKT check."

    def test_tampered_outcome_fails(self, tmp_path: Path):
        """Test that modified LMPs fail with exit code 3.

        Args:
            tmp_path (Path): Temporary directory.
        """
        outcome = tmp_path / "outcome.json"
        run_cli(["clear", "--case", "two_bus", "--out", str(outcome)])
        data = json.loads(outcome.read_text(encoding="utf-8"))
        data["lmps"][1] += 5.0
        outcome.write_text(json.dumps(data), encoding="utf-8")

        result = run_cli(["check-kkt", "--case", "two_bus", "--outcome", str(outcome)])
        assert result.exit_code == 3, f"Expected exit code 3, got {result.exit_code}"
        assert result.json()["passed"] is False, "Tampered outcome passed."

    def test_outcome_of_other_case(self, tmp_path: Path):
        """Test that an outcome with the wrong vector lengths is a format error.

        Args:
            tmp_path (Path): Temporary directory.
        """
        outcome = tmp_path / "outcome.json"
        run_cli(["clear", "--case", "two_bus", "--out", str(outcome)])
        result = run_cli(["check-kkt", "--case", "six_bus", "--outcome", str(outcome)])
        assert result.exit_code == 3, f"Expected exit code 3, got {result.exit_code}"
        assert "CaseFormatError" in result.stderr, f"Unexpected error output {result.stderr!r}"


@pytest.mark.parametrize(
    "args, code, text",
    [
        (["clear", "--case", "two_bus", "--eps", "0"], 2, ""),
        (["curtail-tree", "--case", "two_bus", "--eps", "0"], 2, "--eps must be positive"),
        (["clear", "--case", "two_bus", "--alpha", "0.1"], 2, "--alpha needs --bus"),
        (["clear", "--case", "two_bus", "--bus", "9"], 2, "bus 9 is not in case"),
        (["clear", "--case", "two_bus", "--format", "csv"], 2, "has no CSV output"),
        (["market-power", "--case", "two_bus", "--bus", "1", "--alpha", "0"], 2, "zero curtailment"),
        (["clear", "--case", "no_such_case"], 3, "case file not found"),
        (["curtail-tree", "--case", "ring3"], 3, "network is not radial"),
        (["clear", "--case", "two_bus", "--bus", "1", "--alpha", "0.5"], 4, "ClearingInfeasibleError"),
        (["brute-force", "--case", "two_bus", "--brute-force-budget", "50"], 5, "budget is 50"),
        (["curtail-tree", "--case", "two_bus", "--grid-budget", "100"], 5, "GridBudgetError"),
    ],
)
def test_exit_codes(args, code: int, text: str):
    """Test the exit code and error message of failing runs.

    Args:
        args: Command line arguments.
        code (int): Expected exit code.
        text (str): Text expected on stderr.
    """
    result = run_cli(args)
    assert result.exit_code == code, f"{args}: expected {code}, got {result.exit_code} ({result.stderr})"
    assert text in result.stderr, f"{args}: {text!r} not found in {result.stderr!r}"
    assert result.stdout == "", "Failing runs must not emit an artifact."


def test_undecodable_case_file(tmp_path: Path):
    """Test that a case file which is not UTF-8 fails as a case format error.

    Args:
        tmp_path (Path): Temporary directory.
    """
    case = tmp_path / "binary.json"
    case.write_bytes(b"\xff\xfe")
    result = run_cli(["clear", "--case", str(case)])
    assert result.exit_code == 3, f"Expected exit code 3, got {result.exit_code} ({result.stderr})"
    assert "not valid UTF-8" in result.stderr, f"Unexpected error message {result.stderr!r}"
