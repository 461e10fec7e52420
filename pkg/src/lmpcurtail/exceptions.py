"""Custom exceptions for lmpcurtail modules.

Every exception carries the process exit code the command line reports for it.
"""


class LmpCurtailError(Exception):
    """Base exception for all lmpcurtail errors."""

    exit_code: int = 1


class ConfigError(LmpCurtailError):
    """Raised when the run configuration is invalid."""

    exit_code = 2


class InvalidCurtailmentError(LmpCurtailError):
    """Raised when a curtailment vector violates 0 <= alpha <= aggregator share."""

    exit_code = 2


class UndefinedIndexError(LmpCurtailError):
    """Raised when the market power index is requested at zero curtailment or zero price."""

    exit_code = 2


class CaseFormatError(LmpCurtailError):
    """Raised when a case file cannot be read or is structurally malformed."""

    exit_code = 3


class NetworkValidationError(LmpCurtailError):
    """Raised when a network breaks one or more of its invariants."""

    exit_code = 3

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NotRadialError(LmpCurtailError):
    """Raised when a tree-only operation receives a meshed network."""

    exit_code = 3

    def __init__(self, message: str = "network is not radial"):
        super().__init__(message)


class DegenerateNetworkError(LmpCurtailError):
    """Raised when the reduced susceptance system is singular."""

    exit_code = 3


class MalformedCaseError(LmpCurtailError):
    """Raised when the clearing program is unbounded."""

    exit_code = 3


class ClearingInfeasibleError(LmpCurtailError):
    """Raised when curtailment exceeds the redispatch flexibility of the system."""

    exit_code = 4


class BudgetExceededError(LmpCurtailError):
    """Raised when a brute-force search would exceed its clearing budget."""

    exit_code = 5


class GridBudgetError(BudgetExceededError):
    """Raised when a DP discretization exceeds its per-node state budget."""


class LpError(LmpCurtailError):
    """Raised when the simplex method cannot finish (iteration limit, singular basis)."""


class DegenerateBasisError(LmpCurtailError):
    """Raised when jump tracing stays degenerate after the curtailment nudge."""


class DpInfeasibleError(LmpCurtailError):
    """Raised when no discretized state satisfies the relaxed clearing conditions."""


class StaircaseError(LmpCurtailError):
    """Raised when staircase tracing stops making progress."""
