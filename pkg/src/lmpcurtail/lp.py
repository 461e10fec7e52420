"""Dense bounded-variable revised simplex with complete dual extraction.

Programs have the form::

    minimize    c^T x
    subject to  row_lo <= A x <= row_hi
                var_lo <= x   <= var_hi

Internally every row gets a slack ``s = A x`` so the working system is
``[A, -I] (x, s) = 0`` with bounds on all columns. Infeasible starting rows are
covered by artificial columns (phase 1); phase 2 then optimizes ``c`` from the
feasible basis. Pricing is Dantzig's rule until a run of degenerate pivots
switches it to Bland's rule for the rest of the phase.

Dual convention (all multipliers nonnegative)::

    c = A^T (row_duals_lo - row_duals_hi) + var_duals_lo - var_duals_hi
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from .constants import (
    BINDING_TOL,
    DEGENERATE_PIVOTS_BEFORE_BLAND,
    FEASIBILITY_TOL,
    LEXICOGRAPHIC_PERTURBATION,
    MAX_SIMPLEX_ITERATIONS,
    OPTIMALITY_TOL,
    PIVOT_TOL,
)
from .exceptions import LpError

__all__ = [
    "LpStatus",
    "LinearProgram",
    "LpSolution",
    "RhsRange",
    "solve",
    "dual_objective_value",
    "rhs_ranging",
]

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

_SINGULAR_TOL = 1e-12
_TIE_TOL = 1e-12
# Bound violation (relative to the largest finite bound) tolerated in a reported optimum.
_ACCEPT_TOL = 1e2 * FEASIBILITY_TOL


class LpStatus(Enum):
    """Termination status of a solve."""

    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"

    def __str__(self) -> str:
        return self.value


def _near(values: FloatArray, bound: FloatArray) -> NDArray[np.bool_]:
    """Entries of ``values`` within BINDING_TOL (relative) of a finite ``bound``."""
    finite = np.isfinite(bound)
    target = np.where(finite, bound, 0.0)
    return finite & (np.abs(values - target) <= BINDING_TOL * np.maximum(1.0, np.abs(target)))


def _frozen(values, length: Optional[int] = None) -> FloatArray:
    array = np.array(values, dtype=float)
    if length is not None:
        array = array.reshape(length)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """An immutable dense linear program with two-sided rows and variable bounds."""

    objective: FloatArray
    matrix: FloatArray
    row_lo: FloatArray
    row_hi: FloatArray
    var_lo: FloatArray
    var_hi: FloatArray

    def __post_init__(self) -> None:
        objective = _frozen(self.objective).reshape(-1)
        n_vars = objective.shape[0]
        row_lo = _frozen(self.row_lo).reshape(-1)
        n_rows = row_lo.shape[0]
        matrix = np.array(self.matrix, dtype=float).reshape(n_rows, n_vars)
        matrix.setflags(write=False)

        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "row_lo", row_lo)
        object.__setattr__(self, "row_hi", _frozen(self.row_hi, n_rows))
        object.__setattr__(self, "var_lo", _frozen(self.var_lo, n_vars))
        object.__setattr__(self, "var_hi", _frozen(self.var_hi, n_vars))

        for name in ("objective", "matrix", "row_lo", "row_hi", "var_lo", "var_hi"):
            if np.isnan(getattr(self, name)).any():
                raise ValueError(f"{name} contains NaN")
        if not np.all(np.isfinite(self.objective)) or not np.all(np.isfinite(self.matrix)):
            raise ValueError("objective and matrix entries must be finite")
        if np.any(self.row_lo > self.row_hi):
            raise ValueError("row lower bound exceeds row upper bound")
        if np.any(self.var_lo > self.var_hi):
            raise ValueError("variable lower bound exceeds variable upper bound")

    @property
    def n_vars(self) -> int:
        return int(self.objective.shape[0])

    @property
    def n_rows(self) -> int:
        return int(self.row_lo.shape[0])

    @classmethod
    def from_rows(
        cls,
        objective: Sequence[float],
        rows: Sequence[Tuple[Sequence[float], float, float]],
        var_lo: Optional[Sequence[float]] = None,
        var_hi: Optional[Sequence[float]] = None,
    ) -> "LinearProgram":
        """Builds a program from ``(coefficients, lower, upper)`` rows.

        Args:
            objective (Sequence[float]): Cost vector.
            rows (Sequence[Tuple[Sequence[float], float, float]]): Constraint rows; equal bounds give an equality.
            var_lo (Optional[Sequence[float]]): Variable lower bounds, default 0.
            var_hi (Optional[Sequence[float]]): Variable upper bounds, default +inf.

        Returns:
            LinearProgram: The program.
        """
        n_vars = len(objective)
        matrix = np.array([list(coefficients) for coefficients, _, _ in rows], dtype=float).reshape(len(rows), n_vars)
        return cls(
            objective=np.asarray(objective, dtype=float),
            matrix=matrix,
            row_lo=np.array([lower for _, lower, _ in rows], dtype=float),
            row_hi=np.array([upper for _, _, upper in rows], dtype=float),
            var_lo=np.zeros(n_vars) if var_lo is None else np.asarray(var_lo, dtype=float),
            var_hi=np.full(n_vars, np.inf) if var_hi is None else np.asarray(var_hi, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class LpSolution:
    """Result of :func:`solve`. Arrays are empty unless the status is optimal."""

    status: LpStatus
    primal: FloatArray
    row_activity: FloatArray
    row_duals_lo: FloatArray
    row_duals_hi: FloatArray
    var_duals_lo: FloatArray
    var_duals_hi: FloatArray
    objective_value: float
    binding_rows: Tuple[int, ...]
    basis: Tuple[int, ...]
    """Basic columns of ``[A, -I]``; column ``n_vars + i`` is the slack of row ``i``."""
    at_upper: Tuple[int, ...]
    """Nonbasic columns resting at their upper bound."""
    iterations: int

    @property
    def is_optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL

    @property
    def row_duals(self) -> FloatArray:
        """Signed row multipliers ``row_duals_lo - row_duals_hi``."""
        return self.row_duals_lo - self.row_duals_hi


@dataclass(frozen=True)
class RhsRange:
    """Outcome of a parametric right-hand-side ratio test."""

    step: float
    """Largest shift size keeping the basis primal feasible (inf when unlimited)."""
    primal_direction: FloatArray
    """Rate of change of the structural variables per unit shift."""
    limiting: Optional[int]
    """Column whose bound stops the shift, None when unlimited."""


class _Simplex:
    """Working state of one bounded revised simplex run over ``matrix @ x = 0``."""

    def __init__(self, matrix: FloatArray, lower: FloatArray, upper: FloatArray, values: FloatArray, basis: List[int]):
        self.matrix = matrix
        self.lower = lower
        self.upper = upper
        self.values = values
        self.basis = basis
        self.iterations = 0

    def factorize(self) -> Tuple[FloatArray, NDArray[np.int32]]:
        """LU factorizes the basis matrix and refreshes the basic values."""
        factors = linalg.lu_factor(self.matrix[:, self.basis], check_finite=False)
        diagonal = np.abs(np.diag(factors[0]))
        if diagonal.size and diagonal.min() <= _SINGULAR_TOL * max(1.0, diagonal.max()):
            raise LpError("singular basis matrix")

        nonbasic = self.snap_nonbasic()
        rhs = -(self.matrix[:, nonbasic] @ self.values[nonbasic])
        self.values[self.basis] = linalg.lu_solve(factors, rhs, check_finite=False)
        return factors

    def nonbasic_mask(self) -> NDArray[np.bool_]:
        mask = np.ones(self.matrix.shape[1], dtype=bool)
        mask[self.basis] = False
        return mask

    def snap_nonbasic(self) -> NDArray[np.bool_]:
        """Moves nonbasic values that drifted next to a bound exactly onto it."""
        nonbasic = self.nonbasic_mask()
        low = nonbasic & _near(self.values, self.lower)
        high = nonbasic & ~low & _near(self.values, self.upper)
        self.values[low] = self.lower[low]
        self.values[high] = self.upper[high]
        return nonbasic

    def bound_violation(self) -> float:
        """Largest distance of any column from its bounds."""
        below = np.where(np.isfinite(self.lower), self.lower - self.values, 0.0)
        above = np.where(np.isfinite(self.upper), self.values - self.upper, 0.0)
        return float(max(0.0, below.max(initial=0.0), above.max(initial=0.0)))

    def reduced_costs(self, factors, cost: FloatArray) -> Tuple[FloatArray, FloatArray]:
        duals = linalg.lu_solve(factors, cost[self.basis], trans=1, check_finite=False)
        return duals, cost - self.matrix.T @ duals

    def price(self, reduced: FloatArray, bland: bool) -> Tuple[Optional[int], int]:
        """Selects the entering column and its direction (+1 increase, -1 decrease)."""
        nonbasic = self.nonbasic_mask()
        increase = nonbasic & (self.values < self.upper) & (reduced < -OPTIMALITY_TOL)
        decrease = nonbasic & (self.values > self.lower) & (reduced > OPTIMALITY_TOL)
        candidates = np.flatnonzero(increase | decrease)
        if candidates.size == 0:
            return None, 0

        if bland:
            entering = int(candidates[0])
        else:
            entering = int(candidates[np.argmax(np.abs(reduced[candidates]))])
        return entering, 1 if increase[entering] else -1

    def ratio_test(self, rates: FloatArray) -> Tuple[float, Optional[int], bool]:
        """Finds the first basic variable to hit a bound along ``rates``.

        Returns:
            Tuple[float, Optional[int], bool]: Step, basis position, and whether it leaves at its upper bound.
        """
        basis = np.asarray(self.basis)
        values = self.values[basis]
        upper = self.upper[basis]
        lower = self.lower[basis]

        steps = np.full(basis.shape[0], np.inf)
        to_upper = rates > PIVOT_TOL
        to_lower = rates < -PIVOT_TOL
        with np.errstate(invalid="ignore", divide="ignore"):
            up_steps = (upper - values) / rates
            down_steps = (lower - values) / rates
        up_mask = to_upper & np.isfinite(upper)
        down_mask = to_lower & np.isfinite(lower)
        steps[up_mask] = up_steps[up_mask]
        steps[down_mask] = down_steps[down_mask]
        steps = np.maximum(steps, 0.0)

        best = steps.min() if steps.size else np.inf
        if not np.isfinite(best):
            return np.inf, None, False

        ties = np.flatnonzero(steps <= best + _TIE_TOL)
        position = int(ties[np.argmin(basis[ties])])
        return float(best), position, bool(up_mask[position])

    def run(self, cost: FloatArray) -> LpStatus:
        """Iterates until optimal or unbounded for ``cost``."""
        bland = False
        degenerate_run = 0

        for _ in range(MAX_SIMPLEX_ITERATIONS):
            factors = self.factorize()
            _, reduced = self.reduced_costs(factors, cost)
            entering, direction = self.price(reduced, bland)
            if entering is None:
                return LpStatus.OPTIMAL

            column = linalg.lu_solve(factors, self.matrix[:, entering], check_finite=False)
            rates = -direction * column
            step, position, leaves_upper = self.ratio_test(rates)

            flip = self.upper[entering] - self.lower[entering]
            if not np.isfinite(step) and not np.isfinite(flip):
                return LpStatus.UNBOUNDED

            self.iterations += 1
            if flip <= step:
                self.values[entering] = self.upper[entering] if direction > 0 else self.lower[entering]
                self.values[self.basis] += rates * flip
                degenerate_run = 0
                continue

            self.values[entering] += direction * step
            self.values[self.basis] += rates * step
            leaving = self.basis[position]
            self.values[leaving] = self.upper[leaving] if leaves_upper else self.lower[leaving]
            self.basis[position] = entering

            degenerate_run = degenerate_run + 1 if step <= _TIE_TOL else 0
            if not bland and degenerate_run >= DEGENERATE_PIVOTS_BEFORE_BLAND:
                logger.debug("Switching to Bland's rule after %d degenerate pivots", degenerate_run)
                bland = True

        raise LpError(f"simplex iteration limit of {MAX_SIMPLEX_ITERATIONS} reached")

    def drive_out(self, artificial_start: int) -> None:
        """Replaces basic artificial columns by ordinary nonbasic columns."""
        for position in range(len(self.basis)):
            if self.basis[position] < artificial_start:
                continue
            factors = linalg.lu_factor(self.matrix[:, self.basis], check_finite=False)
            unit = np.zeros(len(self.basis))
            unit[position] = 1.0
            pivot_row = linalg.lu_solve(factors, unit, trans=1, check_finite=False) @ self.matrix
            mask = self.nonbasic_mask()
            mask[artificial_start:] = False
            candidates = np.flatnonzero(mask & (np.abs(pivot_row) > PIVOT_TOL))
            if candidates.size == 0:
                raise LpError("cannot remove artificial column from the basis")
            entering = int(candidates[np.argmax(np.abs(pivot_row[candidates]))])
            self.values[self.basis[position]] = 0.0
            self.basis[position] = entering


def _initial_values(lower: FloatArray, upper: FloatArray) -> FloatArray:
    return np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))


def _infeasible(lp: LinearProgram, iterations: int, status: LpStatus = LpStatus.INFEASIBLE) -> LpSolution:
    empty = np.zeros(0)
    return LpSolution(
        status=status,
        primal=empty,
        row_activity=empty,
        row_duals_lo=empty,
        row_duals_hi=empty,
        var_duals_lo=empty,
        var_duals_hi=empty,
        objective_value=float("nan"),
        binding_rows=(),
        basis=(),
        at_upper=(),
        iterations=iterations,
    )


def _split_duals(
    reduced: FloatArray, values: FloatArray, lower: FloatArray, upper: FloatArray, basic: NDArray[np.bool_]
) -> Tuple[FloatArray, FloatArray]:
    at_lower = ~basic & _near(values, lower)
    at_upper = ~basic & _near(values, upper)
    duals_lo = np.where(at_lower, np.maximum(reduced, 0.0), 0.0)
    duals_hi = np.where(at_upper, np.maximum(-reduced, 0.0), 0.0)
    return duals_lo, duals_hi


def _bound_scale(lp: LinearProgram) -> float:
    bounds = np.concatenate([lp.row_lo, lp.row_hi, lp.var_lo, lp.var_hi])
    finite = np.abs(bounds[np.isfinite(bounds)])
    return max(1.0, float(finite.max())) if finite.size else 1.0


def _solve_without_rows(lp: LinearProgram, cost: FloatArray) -> LpSolution:
    values = np.where(cost > 0, lp.var_lo, np.where(cost < 0, lp.var_hi, _initial_values(lp.var_lo, lp.var_hi)))
    if not np.all(np.isfinite(values)):
        return _infeasible(lp, 0, LpStatus.UNBOUNDED)
    basic = np.zeros(lp.n_vars, dtype=bool)
    duals_lo, duals_hi = _split_duals(cost, values, lp.var_lo, lp.var_hi, basic)
    empty = np.zeros(0)
    return LpSolution(
        status=LpStatus.OPTIMAL,
        primal=values,
        row_activity=empty,
        row_duals_lo=empty,
        row_duals_hi=empty,
        var_duals_lo=duals_lo,
        var_duals_hi=duals_hi,
        objective_value=float(lp.objective @ values),
        binding_rows=(),
        basis=(),
        at_upper=tuple(int(j) for j in np.flatnonzero(_near(values, lp.var_hi) & (lp.var_lo < lp.var_hi))),
        iterations=0,
    )


def solve(lp: LinearProgram, perturb: bool = False) -> LpSolution:
    """Solves ``lp`` with the bounded revised simplex method.

    Args:
        lp (LinearProgram): The program.
        perturb (bool): Add a deterministic lexicographic cost perturbation (at most 1e-9)
            that singles out one optimal vertex among ties.

    Returns:
        LpSolution: Optimal primal/dual pair, or an infeasible/unbounded status.

    Raises:
        LpError: On the iteration limit or a singular basis.
    """
    n_vars, n_rows = lp.n_vars, lp.n_rows

    cost = np.array(lp.objective, dtype=float)
    if perturb and n_vars:
        cost = cost + LEXICOGRAPHIC_PERTURBATION * (n_vars - np.arange(n_vars)) / n_vars

    if n_rows == 0:
        return _solve_without_rows(lp, cost)

    matrix = np.hstack([lp.matrix, -np.eye(n_rows)])
    lower = np.concatenate([lp.var_lo, lp.row_lo])
    upper = np.concatenate([lp.var_hi, lp.row_hi])
    values = np.zeros(n_vars + n_rows)
    values[:n_vars] = _initial_values(lp.var_lo, lp.var_hi)
    activity = lp.matrix @ values[:n_vars]
    basis = list(range(n_vars, n_vars + n_rows))

    # Rows whose starting activity misses their bounds get an artificial column.
    below = activity < lp.row_lo - FEASIBILITY_TOL
    above = activity > lp.row_hi + FEASIBILITY_TOL
    violated = np.flatnonzero(below | above)
    total = n_vars + n_rows
    iterations = 0

    if violated.size:
        artificial = np.zeros((n_rows, violated.size))
        for column, row in enumerate(violated):
            target = lp.row_lo[row] if below[row] else lp.row_hi[row]
            values[n_vars + row] = target
            artificial[row, column] = 1.0 if target > activity[row] else -1.0
            basis[row] = total + column

        phase_one = _Simplex(
            np.hstack([matrix, artificial]),
            np.concatenate([lower, np.zeros(violated.size)]),
            np.concatenate([upper, np.full(violated.size, np.inf)]),
            np.concatenate([values, np.zeros(violated.size)]),
            basis,
        )
        phase_one_cost = np.concatenate([np.zeros(total), np.ones(violated.size)])
        phase_one.run(phase_one_cost)
        phase_one.factorize()
        iterations = phase_one.iterations

        infeasibility = float(phase_one.values[total:].sum())
        if infeasibility > FEASIBILITY_TOL * _bound_scale(lp):
            logger.debug("Phase 1 ended with infeasibility %.3e", infeasibility)
            return _infeasible(lp, iterations)

        phase_one.drive_out(total)
        values = phase_one.values[:total].copy()
        basis = phase_one.basis

    simplex = _Simplex(matrix, lower, upper, values, basis)
    phase_two_cost = np.concatenate([cost, np.zeros(n_rows)])
    status = simplex.run(phase_two_cost)
    iterations += simplex.iterations
    if status != LpStatus.OPTIMAL:
        return _infeasible(lp, iterations, status)

    factors = simplex.factorize()
    violation = simplex.bound_violation()
    if violation > _ACCEPT_TOL * _bound_scale(lp):
        raise LpError(f"optimal basis violates a bound by {violation:.3e}")
    _, reduced = simplex.reduced_costs(factors, phase_two_cost)
    basic = ~simplex.nonbasic_mask()
    duals_lo, duals_hi = _split_duals(reduced, simplex.values, lower, upper, basic)

    primal = simplex.values[:n_vars].copy()
    row_activity = simplex.values[n_vars:].copy()
    binding = np.flatnonzero(
        (np.abs(row_activity - lp.row_lo) <= BINDING_TOL) | (np.abs(row_activity - lp.row_hi) <= BINDING_TOL)
    )
    at_upper = np.flatnonzero(~basic & _near(simplex.values, upper) & (lower < upper))

    logger.debug("Simplex finished in %d iterations", iterations)
    return LpSolution(
        status=LpStatus.OPTIMAL,
        primal=primal,
        row_activity=row_activity,
        row_duals_lo=duals_lo[n_vars:],
        row_duals_hi=duals_hi[n_vars:],
        var_duals_lo=duals_lo[:n_vars],
        var_duals_hi=duals_hi[:n_vars],
        objective_value=float(lp.objective @ primal),
        binding_rows=tuple(int(row) for row in binding),
        basis=tuple(int(column) for column in simplex.basis),
        at_upper=tuple(int(column) for column in at_upper),
        iterations=iterations,
    )


def _finite_dot(bounds: FloatArray, multipliers: FloatArray) -> float:
    finite = np.isfinite(bounds)
    return float(bounds[finite] @ multipliers[finite])


def dual_objective_value(lp: LinearProgram, solution: LpSolution) -> float:
    """Evaluates the dual objective at the multipliers of ``solution``.

    Raises:
        ValueError: If the solution is not optimal.
    """
    if not solution.is_optimal:
        raise ValueError(f"dual objective needs an optimal solution, got {solution.status}")
    return (
        _finite_dot(lp.row_lo, solution.row_duals_lo)
        - _finite_dot(lp.row_hi, solution.row_duals_hi)
        + _finite_dot(lp.var_lo, solution.var_duals_lo)
        - _finite_dot(lp.var_hi, solution.var_duals_hi)
    )


def rhs_ranging(lp: LinearProgram, solution: LpSolution, row_shift: Sequence[float]) -> RhsRange:
    """Parametric ratio test for row bounds moving as ``bounds + theta * row_shift``.

    Within the optimal basis of ``solution`` the nonbasic slacks follow their moving
    bounds, the basic variables follow ``x_B(theta) = x_B + theta * rate``, and the
    largest ``theta`` that keeps every basic variable within its (possibly moving)
    bounds is returned.

    Args:
        lp (LinearProgram): The solved program.
        solution (LpSolution): An optimal solution of ``lp``.
        row_shift (Sequence[float]): Rate at which both bounds of each row move.

    Returns:
        RhsRange: Step length, primal direction and the limiting column.
    """
    if not solution.is_optimal:
        raise ValueError(f"ranging needs an optimal solution, got {solution.status}")

    n_vars, n_rows = lp.n_vars, lp.n_rows
    shift = np.zeros(n_vars + n_rows)
    shift[n_vars:] = np.asarray(row_shift, dtype=float).reshape(n_rows)

    matrix = np.hstack([lp.matrix, -np.eye(n_rows)])
    lower = np.concatenate([lp.var_lo, lp.row_lo])
    upper = np.concatenate([lp.var_hi, lp.row_hi])
    values = np.concatenate([solution.primal, solution.row_activity])
    basis = list(solution.basis)

    nonbasic = np.ones(n_vars + n_rows, dtype=bool)
    nonbasic[basis] = False
    # Nonbasic columns follow their moving bound; free nonbasic columns stay put.
    moving = np.where(nonbasic & (np.isfinite(lower) | np.isfinite(upper)), shift, 0.0)

    factors = linalg.lu_factor(matrix[:, basis], check_finite=False)
    basic_rates = -linalg.lu_solve(factors, matrix @ moving, check_finite=False)
    relative = basic_rates - shift[basis]

    steps = np.full(len(basis), np.inf)
    for position, column in enumerate(basis):
        rate = relative[position]
        if rate > PIVOT_TOL and np.isfinite(upper[column]):
            steps[position] = max((upper[column] - values[column]) / rate, 0.0)
        elif rate < -PIVOT_TOL and np.isfinite(lower[column]):
            steps[position] = max((lower[column] - values[column]) / rate, 0.0)

    direction = moving.copy()
    direction[basis] = basic_rates

    best = float(steps.min()) if steps.size else np.inf
    limiting = None
    if np.isfinite(best):
        ties = np.flatnonzero(steps <= best + _TIE_TOL)
        limiting = int(np.asarray(basis)[ties].min())

    return RhsRange(step=best, primal_direction=direction[:n_vars], limiting=limiting)
