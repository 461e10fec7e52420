"""Aggregator-facing analytics: curtailment profit, market power and experiments."""

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .constants import (
    DEFAULT_ALLOWANCE,
    DEFAULT_BRUTE_FORCE_BUDGET,
    DEFAULT_ENDOWMENT,
    DEFAULT_RESOLUTION,
    DEFAULT_SEED,
)
from .exceptions import BudgetExceededError, ClearingInfeasibleError, ConfigError, UndefinedIndexError
from .market import MarketOutcome, favorable_outcome
from .model import Network, check_curtailment
from .singlebus import trace_staircase

__all__ = [
    "ProfitBreakdown",
    "MarketPowerIndex",
    "PowerProfitReport",
    "BruteForceResult",
    "GrowthRecord",
    "GrowthExperiment",
    "curtailment_profit",
    "profit_from_outcomes",
    "market_power",
    "verify_power_profit_link",
    "brute_force_curtailment",
    "endow",
    "growth_experiment",
]

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

_IDENTITY_TOL = 1e-6
_PROFIT_TOL = 1e-9


@dataclass(frozen=True)
class ProfitBreakdown:
    """Per-bus curtailment profit terms ``lmp(alpha) (share - alpha) - lmp(0) share``."""

    buses: Tuple[int, ...]
    terms: Tuple[float, ...]
    total: float
    lmps_before: Tuple[float, ...]
    lmps_after: Tuple[float, ...]
    alpha: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total": self.total,
            "alpha": list(self.alpha),
            "buses": [
                {"bus": bus, "term": term, "lmp_before": before, "lmp_after": after}
                for bus, term, before, after in zip(self.buses, self.terms, self.lmps_before, self.lmps_after)
            ],
        }


@dataclass(frozen=True)
class MarketPowerIndex:
    """Relative price move over relative curtailment at one bus."""

    bus: int
    alpha: float
    eta: float
    lmp_before: float
    lmp_after: float
    price_move: float
    curtailment_ratio: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bus": self.bus,
            "alpha": self.alpha,
            "eta": self.eta,
            "lmp_before": self.lmp_before,
            "lmp_after": self.lmp_after,
            "price_move": self.price_move,
            "curtailment_ratio": self.curtailment_ratio,
        }


@dataclass(frozen=True)
class PowerProfitReport:
    """Check of ``eta - 1 = profit share / (lmp0 (share - alpha) alpha) + alpha / (share - alpha)``."""

    bus: int
    alpha: float
    profit: float
    eta: float
    lower_bound: Optional[float]
    """The profit term of the identity, a lower bound on ``eta - 1``."""
    identity_residual: Optional[float]
    identity_holds: Optional[bool]
    implication_holds: Optional[bool]
    """Whether positive profit came with ``eta > 1``; None when the profit is zero."""
    series: Tuple[Tuple[float, float, float], ...]
    """``(alpha, profit, eta)`` at every jump point of the bus's staircase."""
    series_consistent: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bus": self.bus,
            "alpha": self.alpha,
            "profit": self.profit,
            "eta": self.eta,
            "lower_bound": self.lower_bound,
            "identity_residual": self.identity_residual,
            "identity_holds": self.identity_holds,
            "implication_holds": self.implication_holds,
            "series": [{"alpha": a, "profit": g, "eta": e} for a, g, e in self.series],
            "series_consistent": self.series_consistent,
        }


@dataclass(frozen=True)
class BruteForceResult:
    """Best grid curtailment found by exhaustive search."""

    alpha_star: Tuple[float, ...]
    profit: float
    buses: Tuple[int, ...]
    resolution: int
    evaluated: int
    infeasible: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha_star": list(self.alpha_star),
            "profit": self.profit,
            "buses": list(self.buses),
            "resolution": self.resolution,
            "evaluated": self.evaluated,
            "infeasible": self.infeasible,
        }


class GrowthRecord(NamedTuple):
    k: int
    baseline_profit: float
    strategic_profit: float
    curtailment_profit: float
    greedy: bool


@dataclass(frozen=True)
class GrowthExperiment:
    """Aggregator revenue with and without strategic curtailment versus its size."""

    seed: int
    order: Tuple[int, ...]
    endowment: float
    allowance: float
    demand_scale: float
    records: Tuple[GrowthRecord, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.records), columns=list(GrowthRecord._fields))

    def sidecar(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "order": list(self.order),
            "endowment": self.endowment,
            "allowance": self.allowance,
            "demand_scale": self.demand_scale,
            "sizes": [record.k for record in self.records],
        }

    def to_dict(self) -> Dict[str, Any]:
        return {**self.sidecar(), "records": [record._asdict() for record in self.records]}


def _targets(net: Network) -> Tuple[int, ...]:
    return net.aggregator_buses


def profit_from_outcomes(net: Network, before: MarketOutcome, after: MarketOutcome) -> ProfitBreakdown:
    """Builds the profit breakdown from two clearing outcomes of ``net``."""
    share = net.aggregator_share
    alpha = after.alpha
    buses = _targets(net)
    positions = [net.bus_position(bus) for bus in buses]
    terms = tuple(
        float(after.lmps[pos] * (share[pos] - alpha[pos]) - before.lmps[pos] * share[pos]) for pos in positions
    )
    return ProfitBreakdown(
        buses=buses,
        terms=terms,
        total=float(sum(terms)),
        lmps_before=tuple(float(before.lmps[pos]) for pos in positions),
        lmps_after=tuple(float(after.lmps[pos]) for pos in positions),
        alpha=tuple(float(value) for value in alpha),
    )


def curtailment_profit(
    net: Network, alpha: Sequence[float], lambda_bounds: Optional[Tuple[float, float]] = None
) -> ProfitBreakdown:
    """Curtailment profit of the aggregator with favorable LMPs before and after.

    Raises:
        ClearingInfeasibleError: If clearing fails at zero curtailment or at ``alpha``.
    """
    alpha = check_curtailment(net, alpha)
    before = favorable_outcome(net, None, lambda_bounds=lambda_bounds)
    after = favorable_outcome(net, alpha, lambda_bounds=lambda_bounds)
    return profit_from_outcomes(net, before, after)


def _single_bus_lmps(
    net: Network, bus: int, alpha: float, lambda_bounds: Optional[Tuple[float, float]]
) -> Tuple[float, float, float]:
    position = net.bus_position(bus)
    curtailment = np.zeros(net.n)
    curtailment[position] = alpha
    before = favorable_outcome(net, None, target_buses=[bus], lambda_bounds=lambda_bounds)
    after = favorable_outcome(net, curtailment, target_buses=[bus], lambda_bounds=lambda_bounds)
    return float(before.lmps[position]), float(after.lmps[position]), float(net.aggregator_share[position])


def _eta(lmp_before: float, lmp_after: float, alpha: float, share: float) -> Tuple[float, float, float]:
    price_move = (lmp_after - lmp_before) / lmp_before
    ratio = alpha / share
    return price_move / ratio, price_move, ratio


def market_power(
    net: Network, bus: int, alpha: float, lambda_bounds: Optional[Tuple[float, float]] = None
) -> MarketPowerIndex:
    """Market power index of the aggregator on ``bus`` at curtailment ``alpha``.

    Raises:
        UndefinedIndexError: At zero curtailment, zero share, or a nonpositive base LMP.
    """
    position = net.bus_position(bus)
    share = float(net.aggregator_share[position])
    if share <= 0:
        raise UndefinedIndexError(f"bus {bus} holds no aggregator generation")
    if alpha <= 0:
        raise UndefinedIndexError("market power is undefined at zero curtailment")
    check_curtailment(net, net.curtailment({bus: alpha}))

    lmp_before, lmp_after, _ = _single_bus_lmps(net, bus, alpha, lambda_bounds)
    if lmp_before <= 0:
        raise UndefinedIndexError(f"market power is undefined for the nonpositive base LMP {lmp_before}")
    eta, price_move, ratio = _eta(lmp_before, lmp_after, alpha, share)
    return MarketPowerIndex(
        bus=bus,
        alpha=float(alpha),
        eta=eta,
        lmp_before=lmp_before,
        lmp_after=lmp_after,
        price_move=price_move,
        curtailment_ratio=ratio,
    )


def _identity(profit: float, eta: float, lmp_before: float, alpha: float, share: float):
    if alpha >= share:
        return None, None, None
    lower_bound = profit * share / (lmp_before * (share - alpha) * alpha)
    expected = lower_bound + alpha / (share - alpha)
    residual = abs((eta - 1.0) - expected) / max(1.0, abs(eta - 1.0))
    return lower_bound, residual, residual <= _IDENTITY_TOL


def verify_power_profit_link(
    net: Network, bus: int, alpha: float, lambda_bounds: Optional[Tuple[float, float]] = None
) -> PowerProfitReport:
    """Checks that positive curtailment profit implies market power above one.

    The check uses the exact relation between the index and the profit, then
    repeats it at every jump point of the bus's LMP staircase.
    """
    index = market_power(net, bus, alpha, lambda_bounds)
    share = float(net.aggregator_share[net.bus_position(bus)])
    profit = index.lmp_after * (share - alpha) - index.lmp_before * share
    lower_bound, residual, holds = _identity(profit, index.eta, index.lmp_before, alpha, share)
    implication = None if abs(profit) <= _PROFIT_TOL else (index.eta > 1.0 if profit > 0 else True)

    series: List[Tuple[float, float, float]] = []
    consistent = True
    for jump in trace_staircase(net, bus).jump_points:
        if jump <= 0:
            continue
        before, after, _ = _single_bus_lmps(net, bus, jump, lambda_bounds)
        jump_profit = after * (share - jump) - before * share
        jump_eta = _eta(before, after, jump, share)[0]
        series.append((jump, jump_profit, jump_eta))
        _, _, jump_holds = _identity(jump_profit, jump_eta, before, jump, share)
        if jump_holds is False or (jump_profit > _PROFIT_TOL and jump_eta <= 1.0):
            consistent = False

    return PowerProfitReport(
        bus=bus,
        alpha=float(alpha),
        profit=profit,
        eta=index.eta,
        lower_bound=lower_bound,
        identity_residual=residual,
        identity_holds=holds,
        implication_holds=implication,
        series=tuple(series),
        series_consistent=consistent,
    )


def _search(
    net: Network,
    choices: Sequence[Sequence[float]],
    positions: Sequence[int],
    before: MarketOutcome,
    lambda_bounds: Optional[Tuple[float, float]],
) -> Tuple[FloatArray, float, int, int]:
    """Exhaustive search over the product of per-bus choices; ties keep the first point."""
    share = net.aggregator_share
    baseline = float(before.lmps @ share)
    best_alpha, best_profit = np.zeros(net.n), 0.0
    evaluated = infeasible = 0
    for point in itertools.product(*choices):
        alpha = np.zeros(net.n)
        alpha[list(positions)] = point
        evaluated += 1
        try:
            outcome = favorable_outcome(net, alpha, lambda_bounds=lambda_bounds)
        except ClearingInfeasibleError:
            infeasible += 1
            continue
        profit = float(outcome.lmps @ (share - alpha)) - baseline
        if profit > best_profit + _PROFIT_TOL:
            best_alpha, best_profit = alpha, profit
    return best_alpha, best_profit, evaluated, infeasible


def brute_force_curtailment(
    net: Network,
    resolution: int = DEFAULT_RESOLUTION,
    budget: int = DEFAULT_BRUTE_FORCE_BUDGET,
    lambda_bounds: Optional[Tuple[float, float]] = None,
) -> BruteForceResult:
    """Clears the market at every point of a uniform curtailment grid.

    Each aggregator bus takes the values ``0, share/R, ..., share``. Points where
    clearing is infeasible are skipped.

    Raises:
        BudgetExceededError: If the grid has more than ``budget`` points.
    """
    if resolution < 1:
        raise ConfigError(f"resolution must be at least 1, got {resolution}")
    buses = _targets(net)
    points = (resolution + 1) ** len(buses)
    if points > budget:
        raise BudgetExceededError(
            f"brute force needs {points} clearings for {len(buses)} buses at resolution {resolution}; budget is {budget}"
        )

    positions = [net.bus_position(bus) for bus in buses]
    choices = [np.linspace(0.0, net.aggregator_share[pos], resolution + 1) for pos in positions]
    before = favorable_outcome(net, None, lambda_bounds=lambda_bounds)
    alpha, profit, evaluated, infeasible = _search(net, choices, positions, before, lambda_bounds)
    logger.info("Brute force: %d points, %d infeasible, best profit %.6g", evaluated, infeasible, profit)
    return BruteForceResult(
        alpha_star=tuple(float(value) for value in alpha),
        profit=profit,
        buses=buses,
        resolution=resolution,
        evaluated=evaluated,
        infeasible=infeasible,
    )


def _greedy(
    net: Network,
    positions: Sequence[int],
    amounts: Sequence[float],
    before: MarketOutcome,
    lambda_bounds: Optional[Tuple[float, float]],
) -> float:
    """Switches buses on one at a time in order, keeping each switch that raises profit."""
    share = net.aggregator_share
    baseline = float(before.lmps @ share)
    alpha = np.zeros(net.n)
    best = 0.0
    for position, amount in zip(positions, amounts):
        trial = alpha.copy()
        trial[position] = amount
        try:
            outcome = favorable_outcome(net, trial, lambda_bounds=lambda_bounds)
        except ClearingInfeasibleError:
            continue
        profit = float(outcome.lmps @ (share - trial)) - baseline
        if profit > best + _PROFIT_TOL:
            alpha, best = trial, profit
    return best


def endow(net: Network, buses: Sequence[int], endowment: float = DEFAULT_ENDOWMENT) -> Network:
    """Places ``endowment`` MW of aggregator generation at each of ``buses``.

    The new generation serves an equal amount of local load, so net injections and
    the uncurtailed clearing are those of ``net``. Every other bus has no share.

    Args:
        net (Network): The network.
        buses (Sequence[int]): Endowed bus ids.
        endowment (float): Aggregator generation per bus in MW.

    Returns:
        Network: The endowed copy.
    """
    chosen = set(buses)
    grown = tuple(
        replace(
            bus,
            generation=bus.generation + endowment,
            demand=bus.demand + endowment,
            aggregator_share=float(endowment),
        )
        if bus.id in chosen
        else replace(bus, aggregator_share=0.0)
        for bus in net.buses
    )
    return replace(net, buses=grown)


def growth_experiment(
    net: Network,
    seed: int = DEFAULT_SEED,
    sizes: Optional[Sequence[int]] = None,
    endowment: float = DEFAULT_ENDOWMENT,
    allowance: float = DEFAULT_ALLOWANCE,
    budget: int = DEFAULT_BRUTE_FORCE_BUDGET,
    lambda_bounds: Optional[Tuple[float, float]] = None,
) -> GrowthExperiment:
    """Aggregator revenue versus the number of buses it owns generation on.

    All buses are visited in a seeded random order. The first ``k`` of them are
    endowed with ``endowment`` MW of aggregator generation (see :func:`endow`), and
    each may curtail either nothing or ``allowance`` of it.

    Raises:
        ConfigError: If a size exceeds the number of buses.
    """
    order = tuple(int(bus) for bus in np.random.default_rng(seed).permutation(list(net.bus_ids)))
    sizes = list(range(len(order) + 1)) if sizes is None else [int(size) for size in sizes]
    for size in sizes:
        if not 0 <= size <= len(order):
            raise ConfigError(f"aggregator size {size} is outside [0, {len(order)}] buses")

    records = []
    for size in sizes:
        grown = endow(net, order[:size], endowment)
        if size == 0:
            records.append(GrowthRecord(0, 0.0, 0.0, 0.0, False))
            continue

        before = favorable_outcome(grown, None, lambda_bounds=lambda_bounds)
        baseline = float(before.lmps @ grown.aggregator_share)
        positions = [grown.bus_position(bus) for bus in order[:size]]
        amounts = [allowance * grown.aggregator_share[pos] for pos in positions]

        greedy = 2**size > budget
        if greedy:
            logger.warning("Size %d exceeds the brute-force budget; using greedy curtailment", size)
            profit = _greedy(grown, positions, amounts, before, lambda_bounds)
        else:
            choices = [(0.0, amount) for amount in amounts]
            _, profit, _, _ = _search(grown, choices, positions, before, lambda_bounds)
        records.append(GrowthRecord(size, baseline, baseline + profit, profit, greedy))
        logger.info("Size %d: baseline %.6g, curtailment profit %.6g", size, baseline, profit)

    return GrowthExperiment(
        seed=seed,
        order=order,
        endowment=endowment,
        allowance=allowance,
        demand_scale=net.applied_demand_scale,
        records=tuple(records),
    )
