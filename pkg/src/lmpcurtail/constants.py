"""Shared constants for the lmpcurtail toolkit."""

from pathlib import Path
from typing import Dict, Set, Tuple

from .types import Options

try:
    _version: str = (Path(__file__).parent / "VERSION").read_text().strip()
except FileNotFoundError:
    _version: str = "0.0.0-dev"

VERSION: str = _version
"""Current lmpcurtail version."""

CASE_FORMAT_VERSION: str = "1.0"
"""Case file format understood by this release."""

CASES_DIR: Path = Path(__file__).parent / "cases"
"""Directory holding the bundled case files."""

# --- Network defaults ---

DEFAULT_REDISPATCH_LO: float = -2.0
"""Lower redispatch bound (MW) used when a case omits it."""

DEFAULT_REDISPATCH_HI: float = 0.1
"""Upper redispatch bound (MW) used when a case omits it."""

# --- Numerical tolerances ---

FEASIBILITY_TOL: float = 1e-8
"""Absolute primal feasibility tolerance of the LP solver."""

OPTIMALITY_TOL: float = 1e-9
"""Reduced cost tolerance of the LP solver."""

DUALITY_GAP_TOL: float = 1e-7
"""Relative primal/dual objective gap accepted at optimality."""

BINDING_TOL: float = 1e-8
"""Slack below which a constraint row is classified as binding."""

PIVOT_TOL: float = 1e-9
"""Smallest pivot element accepted by the ratio test."""

KKT_TOL: float = 1e-6
"""Default tolerance of the clearing KKT check."""

LEXICOGRAPHIC_PERTURBATION: float = 1e-9
"""Magnitude of the optional deterministic cost perturbation."""

MAX_SIMPLEX_ITERATIONS: int = 5000
"""Iteration limit of a single simplex phase."""

DEGENERATE_PIVOTS_BEFORE_BLAND: int = 20
"""Consecutive degenerate pivots after which pricing switches to Bland's rule."""

DEGENERACY_NUDGE: float = 1e-9
"""Curtailment step used to leave a degenerate basis during jump tracing."""

JUMP_TOL: float = 1e-10
"""Steps shorter than this are treated as a degenerate (zero-length) jump."""

MAX_STAIRCASE_STEPS: int = 10000
"""Hard cap on the number of jumps followed by one staircase trace."""

# --- Budgets and experiment defaults ---

DEFAULT_EPSILON: float = 0.5
"""Default accuracy target of the tree dynamic program."""

DEFAULT_RESOLUTION: int = 100
"""Default brute-force grid resolution per aggregator bus."""

DEFAULT_GRID_BUDGET: int = 1_000_000
"""Maximum number of discretized states per tree node."""

DEFAULT_BRUTE_FORCE_BUDGET: int = 1_000_000
"""Maximum number of market clearings a brute-force search may run."""

DEFAULT_SEED: int = 0
"""Default seed of the growth experiment's bus order."""

DEFAULT_ENDOWMENT: float = 10.0
"""Aggregator generation (MW) placed on each bus in the growth experiment."""

DEFAULT_ALLOWANCE: float = 0.01
"""Fraction of the endowment the aggregator may curtail in the growth experiment."""

MW_QUANTA: Tuple[float, ...] = (1.0, 0.5, 0.25, 0.1, 0.05, 0.02, 0.01, 0.005, 0.001)
"""Candidate MW lattices tried when aligning the DP grid to case data."""

# --- Command line ---

OUTPUT_FORMATS: Tuple[str, ...] = ("json", "csv")
"""Artifact formats accepted by --format."""

OPTIONS: Options = [
    (("--case",), {"dest": "case", "action": "store", "type": Path, "help": "Path to a case file, or a bundled case name."}),
    (("--bus",), {"dest": "bus", "action": "store", "type": int, "help": "Bus id of the aggregator bus."}),
    (("--alpha",), {"dest": "alpha", "action": "store", "type": float, "help": "Curtailment in MW at --bus."}),
    (("--eps",), {"dest": "eps", "action": "store", "type": float, "help": "Accuracy target of the tree DP."}),
    (
        ("--resolution",),
        {"dest": "resolution", "action": "store", "type": int, "help": "Grid intervals per bus for brute force."},
    ),
    (("--lambda-lo",), {"dest": "lambda_lo", "action": "store", "type": float, "help": "Prior lower LMP bound."}),
    (("--lambda-hi",), {"dest": "lambda_hi", "action": "store", "type": float, "help": "Prior upper LMP bound."}),
    (
        ("--scale-demand",),
        {"dest": "scale_demand", "action": "store", "type": float, "help": "Multiplier applied to every demand."},
    ),
    (("--seed",), {"dest": "seed", "action": "store", "type": int, "help": "Seed of the random bus order."}),
    (
        ("--sizes",),
        {"dest": "sizes", "action": "store", "type": int, "nargs": "+", "help": "Aggregator sizes to evaluate."},
    ),
    (
        ("--format",),
        {"dest": "format", "action": "store", "choices": OUTPUT_FORMATS, "help": "Artifact format (csv or json)."},
    ),
    (("--out",), {"dest": "out", "action": "store", "type": Path, "help": "Write the artifact to this path."}),
    (
        ("--outcome",),
        {"dest": "outcome", "action": "store", "type": Path, "help": "Market outcome JSON file to verify."},
    ),
    (("--tolerance",), {"dest": "tolerance", "action": "store", "type": float, "help": "KKT check tolerance."}),
    (
        ("--grid-budget",),
        {"dest": "grid_budget", "action": "store", "type": int, "help": "Maximum DP states per tree node."},
    ),
    (
        ("--brute-force-budget",),
        {"dest": "brute_force_budget", "action": "store", "type": int, "help": "Maximum brute-force clearings."},
    ),
    (
        ("--endowment",),
        {"dest": "endowment", "action": "store", "type": float, "help": "Aggregator MW per bus when growing."},
    ),
    (
        ("--allowance",),
        {"dest": "allowance", "action": "store", "type": float, "help": "Curtailable fraction when growing."},
    ),
    (("--config",), {"dest": "config", "action": "store", "type": str, "help": "Path to a configuration file."}),
    (
        ("-v", "--verbose"),
        {"dest": "verbose", "action": "count", "help": "Increase verbosity (-v info, -vv debug)."},
    ),
]
"""lmpcurtail CLI options, keyed by their dest in COMMANDS."""

COMMON_OPTIONS: Tuple[str, ...] = (
    "case",
    "lambda_lo",
    "lambda_hi",
    "scale_demand",
    "format",
    "out",
    "config",
    "verbose",
)
"""Options accepted by every subcommand."""

COMMANDS: Dict[str, Tuple[str, Tuple[str, ...]]] = {
    "clear": ("Clear the ex-post market and report LMPs.", ("bus", "alpha")),
    "staircase": ("Trace the LMP staircase of one bus.", ("bus", "alpha")),
    "curtail-single": ("Exact optimal curtailment of a single-bus aggregator.", ("bus",)),
    "curtail-tree": ("Epsilon-accurate curtailment on a radial network.", ("eps", "grid_budget")),
    "brute-force": ("Exhaustive grid search over aggregator curtailments.", ("resolution", "brute_force_budget")),
    "market-power": ("Market power index of one bus at a curtailment.", ("bus", "alpha")),
    "grow": (
        "Profit versus aggregator size experiment.",
        ("seed", "sizes", "endowment", "allowance", "brute_force_budget"),
    ),
    "check-kkt": ("Verify the KKT conditions of a stored market outcome.", ("outcome", "tolerance")),
}
"""Subcommands with their help text and command-specific options."""

REQUIRED_OPTIONS: Dict[str, Tuple[str, ...]] = {
    "staircase": ("bus",),
    "curtail-single": ("bus",),
    "market-power": ("bus", "alpha"),
    "check-kkt": ("outcome",),
}
"""Options each subcommand cannot run without (beyond --case)."""

CSV_COMMANDS: Set[str] = {"staircase", "grow"}
"""Subcommands whose artifact defaults to CSV."""

ENV_EXCLUDED_OPTIONS: Set[str] = {"command", "case", "config", "help", "version", "verbose", "outcome"}
"""Option names that are not permitted as environment variables."""

ENV_PREFIX: str = "lmpcurtail_"
"""Lower-cased prefix of environment variables read by the configuration layer."""

USER_CONFIG: str = ".lmpcurtail"
"""Filename for user-level lmpcurtail configuration."""
