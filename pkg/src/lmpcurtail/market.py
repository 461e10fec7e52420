"""Ex-post market clearing, LMP extraction and KKT verification.

The ISO clears::

    minimize    c^T B f
    subject to  redispatch_lo <= B f - p + alpha + d <= redispatch_hi   (lambda-, lambda+)
                flow_lo <= f <= flow_hi                                   (mu-, mu+)
                H f = 0                                                   (nu)

and announces ``lmp = c + lambda+ - lambda-``. Stationarity reads
``B^T (c + lambda+ - lambda-) - mu- + mu+ + H^T nu = 0``.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .constants import BINDING_TOL, KKT_TOL
from .exceptions import ClearingInfeasibleError, MalformedCaseError
from .lp import LinearProgram, LpSolution, LpStatus, solve
from .model import Network, check_curtailment, default_lambda_bounds, derived_matrices

__all__ = [
    "MarketOutcome",
    "KktReport",
    "build_clearing_lp",
    "clear_market",
    "select_favorable_duals",
    "favorable_outcome",
    "check_kkt",
    "dual_clearing_objective",
]

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Gains below this are treated as "the dual optimum is already favorable".
_SELECTION_GAIN_TOL = 1e-9


def _as_tuple(values: Iterable[float]) -> Tuple[float, ...]:
    return tuple(float(value) for value in values)


@dataclass(frozen=True)
class MarketOutcome:
    """Cleared primal point and its multipliers for one curtailment vector."""

    alpha: FloatArray
    flows: FloatArray
    redispatch: FloatArray
    duals_gen_lo: FloatArray
    duals_gen_hi: FloatArray
    duals_flow_lo: FloatArray
    duals_flow_hi: FloatArray
    duals_flow_space: FloatArray
    lmps: FloatArray
    objective_value: float
    solution: Optional[LpSolution] = field(default=None, compare=False, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        """Serializes the outcome into its JSON layout."""
        return {
            "alpha": list(_as_tuple(self.alpha)),
            "flows": list(_as_tuple(self.flows)),
            "redispatch": list(_as_tuple(self.redispatch)),
            "lmps": list(_as_tuple(self.lmps)),
            "duals": {
                "gen_lo": list(_as_tuple(self.duals_gen_lo)),
                "gen_hi": list(_as_tuple(self.duals_gen_hi)),
                "flow_lo": list(_as_tuple(self.duals_flow_lo)),
                "flow_hi": list(_as_tuple(self.duals_flow_hi)),
                "flow_space": list(_as_tuple(self.duals_flow_space)),
            },
            "objective": float(self.objective_value),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MarketOutcome":
        """Rebuilds an outcome from :meth:`to_dict` output.

        Raises:
            KeyError: If a required key is missing.
        """
        duals = data["duals"]
        flows = np.asarray(data["flows"], dtype=float)
        lmps = np.asarray(data["lmps"], dtype=float)
        return cls(
            alpha=np.asarray(data.get("alpha", np.zeros(lmps.shape[0])), dtype=float),
            flows=flows,
            redispatch=np.asarray(data["redispatch"], dtype=float),
            duals_gen_lo=np.asarray(duals["gen_lo"], dtype=float),
            duals_gen_hi=np.asarray(duals["gen_hi"], dtype=float),
            duals_flow_lo=np.asarray(duals["flow_lo"], dtype=float),
            duals_flow_hi=np.asarray(duals["flow_hi"], dtype=float),
            duals_flow_space=np.asarray(duals.get("flow_space", []), dtype=float),
            lmps=lmps,
            objective_value=float(data["objective"]),
        )


@dataclass(frozen=True)
class KktReport:
    """Largest residual of each KKT block and the verdict at ``tolerance``."""

    primal_feasibility: float
    dual_feasibility: float
    complementary_slackness: float
    stationarity: float
    tolerance: float

    @property
    def max_residual(self) -> float:
        return max(self.primal_feasibility, self.dual_feasibility, self.complementary_slackness, self.stationarity)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "primal_feasibility": self.primal_feasibility,
            "dual_feasibility": self.dual_feasibility,
            "complementary_slackness": self.complementary_slackness,
            "stationarity": self.stationarity,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _bus_row_bounds(net: Network, alpha: FloatArray) -> Tuple[FloatArray, FloatArray]:
    offset = net.generation - alpha - net.demand
    return net.redispatch_lo + offset, net.redispatch_hi + offset


def build_clearing_lp(net: Network, alpha: Optional[Sequence[float]] = None) -> LinearProgram:
    """Builds the clearing program over the line flows.

    Args:
        net (Network): A valid network.
        alpha (Optional[Sequence[float]]): Curtailment vector, default zero.

    Returns:
        LinearProgram: n two-sided bus rows followed by the ``H f = 0`` rows.
    """
    alpha = check_curtailment(net, alpha)
    matrices = derived_matrices(net)
    incidence, flow_space = matrices.incidence, matrices.flow_space

    bus_lo, bus_hi = _bus_row_bounds(net, alpha)
    zeros = np.zeros(flow_space.shape[0])
    return LinearProgram(
        objective=incidence.T @ net.costs,
        matrix=np.vstack([incidence, flow_space.reshape(-1, net.t)]),
        row_lo=np.concatenate([bus_lo, zeros]),
        row_hi=np.concatenate([bus_hi, zeros]),
        var_lo=net.flow_lo,
        var_hi=net.flow_hi,
    )


def _outcome_from_solution(net: Network, alpha: FloatArray, solution: LpSolution) -> MarketOutcome:
    n = net.n
    incidence = derived_matrices(net).incidence
    flows = solution.primal.copy()
    duals_gen_lo = solution.row_duals_lo[:n].copy()
    duals_gen_hi = solution.row_duals_hi[:n].copy()
    return MarketOutcome(
        alpha=alpha.copy(),
        flows=flows,
        redispatch=incidence @ flows - net.generation + alpha + net.demand,
        duals_gen_lo=duals_gen_lo,
        duals_gen_hi=duals_gen_hi,
        duals_flow_lo=solution.var_duals_lo.copy(),
        duals_flow_hi=solution.var_duals_hi.copy(),
        duals_flow_space=solution.row_duals_hi[n:] - solution.row_duals_lo[n:],
        lmps=net.costs + duals_gen_hi - duals_gen_lo,
        objective_value=solution.objective_value,
        solution=solution,
    )


def clear_market(net: Network, alpha: Optional[Sequence[float]] = None, perturb: bool = False) -> MarketOutcome:
    """Clears the ex-post market for curtailment ``alpha``.

    Args:
        net (Network): A valid network.
        alpha (Optional[Sequence[float]]): Curtailment vector, default zero.
        perturb (bool): Use the solver's lexicographic cost perturbation.

    Returns:
        MarketOutcome: Flows, redispatch, multipliers and LMPs.

    Raises:
        ClearingInfeasibleError: If the curtailment exceeds the redispatch flexibility.
        MalformedCaseError: If the clearing program is unbounded.
    """
    alpha = check_curtailment(net, alpha)
    lp = build_clearing_lp(net, alpha)
    solution = solve(lp, perturb=perturb)

    if solution.status == LpStatus.INFEASIBLE:
        raise ClearingInfeasibleError(
            f"clearing is infeasible at curtailment {list(_as_tuple(alpha))}: "
            "curtailment exceeds the system redispatch flexibility"
        )
    if solution.status == LpStatus.UNBOUNDED:
        raise MalformedCaseError("clearing program is unbounded; check the flow limits of the case")

    outcome = _outcome_from_solution(net, alpha, solution)
    logger.debug("Cleared market: objective=%.6g lmps=%s", outcome.objective_value, outcome.lmps)
    return outcome


def _binding(values: FloatArray, bound: FloatArray) -> np.ndarray:
    return np.isfinite(bound) & (np.abs(values - bound) <= BINDING_TOL)


def select_favorable_duals(
    net: Network,
    alpha: Optional[Sequence[float]],
    outcome: MarketOutcome,
    target_buses: Optional[Sequence[int]] = None,
    lambda_bounds: Optional[Tuple[float, float]] = None,
) -> MarketOutcome:
    """Picks the aggregator-favorable multipliers on the optimal dual face.

    Keeping the primal point fixed, the multipliers of non-binding constraints are
    zero and the remaining ones range over the stationarity system. A secondary
    program maximizes ``sum_i lmp_i (share_i - alpha_i)`` over the target buses with
    their LMPs capped at ``lambda_bounds``. When no point of the dual face fits the
    caps, they are widened to include the solver's own LMPs.

    Args:
        net (Network): The cleared network.
        alpha (Optional[Sequence[float]]): The curtailment the outcome was cleared at.
        outcome (MarketOutcome): An optimal clearing outcome.
        target_buses (Optional[Sequence[int]]): Bus ids whose revenue is maximized; defaults to
            the aggregator buses.
        lambda_bounds (Optional[Tuple[float, float]]): LMP caps; defaults to the network's prior bounds.

    Returns:
        MarketOutcome: The outcome with favorable multipliers, or ``outcome`` itself when
        the dual optimum cannot be improved.
    """
    alpha = check_curtailment(net, alpha)
    targets = net.aggregator_buses if target_buses is None else tuple(target_buses)
    positions = [net.bus_position(bus_id) for bus_id in targets]
    weights = np.array([net.aggregator_share[pos] - alpha[pos] for pos in positions], dtype=float)
    keep = weights > 0
    positions = [pos for pos, flag in zip(positions, keep) if flag]
    weights = weights[keep]
    if not positions:
        return outcome

    low, high = lambda_bounds if lambda_bounds is not None else default_lambda_bounds(net)
    n, t = net.n, net.t
    matrices = derived_matrices(net)
    incidence, flow_space = matrices.incidence, matrices.flow_space.reshape(-1, t)
    r = flow_space.shape[0]
    costs = net.costs

    # Variables: lambda- (n), lambda+ (n), mu- (t), mu+ (t), nu (r).
    size = 2 * n + 2 * t + r
    upper = np.full(size, np.inf)
    lower = np.zeros(size)
    upper[:n] = np.where(_binding(outcome.redispatch, net.redispatch_lo), np.inf, 0.0)
    upper[n : 2 * n] = np.where(_binding(outcome.redispatch, net.redispatch_hi), np.inf, 0.0)
    upper[2 * n : 2 * n + t] = np.where(_binding(outcome.flows, net.flow_lo), np.inf, 0.0)
    upper[2 * n + t : 2 * n + 2 * t] = np.where(_binding(outcome.flows, net.flow_hi), np.inf, 0.0)
    lower[2 * n + 2 * t :] = -np.inf

    stationarity = np.hstack([-incidence.T, incidence.T, -np.eye(t), np.eye(t), flow_space.T])
    rhs = -incidence.T @ costs

    caps = np.zeros((len(positions), size))
    for row, pos in enumerate(positions):
        caps[row, pos] = -1.0
        caps[row, n + pos] = 1.0
    target_costs = costs[positions]
    current = outcome.lmps[positions]
    keep_if_no_gain = bool(np.all((current >= low - BINDING_TOL) & (current <= high + BINDING_TOL)))

    objective = np.zeros(size)
    for weight, pos in zip(weights, positions):
        objective[pos] = weight
        objective[n + pos] = -weight

    # Strict caps first; widen them to the current LMPs only when no dual point fits the box.
    solution = None
    for cap_lo, cap_hi in (
        (np.full(len(positions), low), np.full(len(positions), high)),
        (np.minimum(low, current), np.maximum(high, current)),
    ):
        lp = LinearProgram(
            objective=objective,
            matrix=np.vstack([stationarity, caps]),
            row_lo=np.concatenate([rhs, cap_lo - target_costs]),
            row_hi=np.concatenate([rhs, cap_hi - target_costs]),
            var_lo=lower,
            var_hi=upper,
        )
        solution = solve(lp)
        if solution.is_optimal:
            break
        keep_if_no_gain = True
    if solution is None or not solution.is_optimal:
        logger.warning("Dual selection program ended %s; keeping the solver's multipliers", solution.status)
        return outcome

    selected = solution.primal
    duals_gen_lo = selected[:n]
    duals_gen_hi = selected[n : 2 * n]
    lmps = costs + duals_gen_hi - duals_gen_lo
    gain = float(weights @ lmps[positions]) - float(weights @ current)
    if keep_if_no_gain and gain <= _SELECTION_GAIN_TOL:
        return outcome

    logger.debug("Favorable dual selection raised target revenue by %.6g", gain)
    return replace(
        outcome,
        duals_gen_lo=duals_gen_lo.copy(),
        duals_gen_hi=duals_gen_hi.copy(),
        duals_flow_lo=selected[2 * n : 2 * n + t].copy(),
        duals_flow_hi=selected[2 * n + t : 2 * n + 2 * t].copy(),
        duals_flow_space=selected[2 * n + 2 * t :].copy(),
        lmps=lmps,
    )


def favorable_outcome(
    net: Network,
    alpha: Optional[Sequence[float]] = None,
    target_buses: Optional[Sequence[int]] = None,
    lambda_bounds: Optional[Tuple[float, float]] = None,
) -> MarketOutcome:
    """Clears the market and applies :func:`select_favorable_duals` in one call."""
    alpha = check_curtailment(net, alpha)
    outcome = clear_market(net, alpha)
    return select_favorable_duals(net, alpha, outcome, target_buses, lambda_bounds)


def _max_abs(*arrays: FloatArray) -> float:
    values = [np.max(np.abs(array)) for array in arrays if np.size(array)]
    return float(max(values)) if values else 0.0


def _finite_product(multiplier: FloatArray, gap: FloatArray) -> FloatArray:
    return np.where(np.isfinite(gap), multiplier * np.where(np.isfinite(gap), gap, 0.0), 0.0)


def check_kkt(
    net: Network, alpha: Optional[Sequence[float]], outcome: MarketOutcome, tol: float = KKT_TOL
) -> KktReport:
    """Evaluates the KKT system of the clearing program at ``outcome``.

    Args:
        net (Network): The network.
        alpha (Optional[Sequence[float]]): Curtailment vector; defaults to ``outcome.alpha``.
        outcome (MarketOutcome): The point to check.
        tol (float): Pass tolerance on every block.

    Returns:
        KktReport: Max residual per block.
    """
    alpha = check_curtailment(net, outcome.alpha if alpha is None else alpha)
    matrices = derived_matrices(net)
    incidence, flow_space = matrices.incidence, matrices.flow_space.reshape(-1, net.t)

    flows, redispatch = outcome.flows, outcome.redispatch
    implied = incidence @ flows - net.generation + alpha + net.demand

    primal = _max_abs(
        np.maximum(net.redispatch_lo - redispatch, 0.0),
        np.maximum(redispatch - net.redispatch_hi, 0.0),
        np.maximum(net.flow_lo - flows, 0.0),
        np.maximum(flows - net.flow_hi, 0.0),
        flow_space @ flows,
        redispatch - implied,
    )

    dual = _max_abs(
        np.maximum(-outcome.duals_gen_lo, 0.0),
        np.maximum(-outcome.duals_gen_hi, 0.0),
        np.maximum(-outcome.duals_flow_lo, 0.0),
        np.maximum(-outcome.duals_flow_hi, 0.0),
    )

    complementary = _max_abs(
        outcome.duals_gen_lo * (redispatch - net.redispatch_lo),
        outcome.duals_gen_hi * (net.redispatch_hi - redispatch),
        _finite_product(outcome.duals_flow_lo, flows - net.flow_lo),
        _finite_product(outcome.duals_flow_hi, net.flow_hi - flows),
    )

    prices = net.costs + outcome.duals_gen_hi - outcome.duals_gen_lo
    stationarity = _max_abs(
        incidence.T @ prices - outcome.duals_flow_lo + outcome.duals_flow_hi + flow_space.T @ outcome.duals_flow_space,
        outcome.lmps - prices,
    )

    return KktReport(
        primal_feasibility=primal,
        dual_feasibility=dual,
        complementary_slackness=complementary,
        stationarity=stationarity,
        tolerance=tol,
    )


def dual_clearing_objective(net: Network, alpha: Optional[Sequence[float]], outcome: MarketOutcome) -> float:
    """Evaluates the dual of the clearing program at the outcome's multipliers.

    Only finite bounds contribute; the ``H f = 0`` rows have a zero right-hand side.
    """
    alpha = check_curtailment(net, outcome.alpha if alpha is None else alpha)
    bus_lo, bus_hi = _bus_row_bounds(net, alpha)
    flow_lo, flow_hi = net.flow_lo, net.flow_hi
    lo_finite, hi_finite = np.isfinite(flow_lo), np.isfinite(flow_hi)
    return float(
        outcome.duals_gen_lo @ bus_lo
        - outcome.duals_gen_hi @ bus_hi
        + outcome.duals_flow_lo[lo_finite] @ flow_lo[lo_finite]
        - outcome.duals_flow_hi[hi_finite] @ flow_hi[hi_finite]
    )
