"""Exact optimal curtailment for an aggregator that sits on a single bus.

Raising the curtailment ``alpha`` at one bus shifts both bounds of that bus row
of the clearing program. Within a fixed optimal basis the flows move linearly in
``alpha`` and the duals (hence the LMPs) stay constant, so the LMP of the bus is
a nondecreasing staircase of ``alpha``. The optimum of the aggregator sits at
``alpha = 0`` or at one of the staircase's jump points.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from .constants import DEGENERACY_NUDGE, JUMP_TOL, MAX_STAIRCASE_STEPS
from .exceptions import ClearingInfeasibleError, DegenerateBasisError, InvalidCurtailmentError, StaircaseError
from .lp import LinearProgram, rhs_ranging, solve
from .market import build_clearing_lp, clear_market, favorable_outcome
from .model import Network, derived_matrices

__all__ = [
    "Segment",
    "StaircaseProfile",
    "CurtailmentResult",
    "constraint_count",
    "feasibility_limit",
    "next_jump",
    "trace_staircase",
    "optimize_single_bus",
]

logger = logging.getLogger(__name__)

# Adjacent segments whose LMPs differ by less than this are merged.
_LMP_MERGE_TOL = 1e-9
# Slack allowed when checking staircase monotonicity.
_MONOTONE_TOL = 1e-7
# Profit improvements below this do not displace a smaller curtailment.
_PROFIT_TIE_TOL = 1e-9


class Segment(NamedTuple):
    """One step of the LMP staircase."""

    alpha_lo: float
    alpha_hi: float
    lmp: float


@dataclass(frozen=True)
class StaircaseProfile:
    """The LMP of one bus as a piecewise constant function of its curtailment."""

    bus: int
    segments: Tuple[Segment, ...]
    jump_points: Tuple[float, ...]
    end: float
    feasibility_limit: float
    constraint_count: int

    def lmp_at(self, alpha: float) -> float:
        """Returns the staircase LMP at ``alpha`` (right-continuous at jumps)."""
        if not self.segments:
            raise ValueError("empty staircase")
        for segment in self.segments:
            if segment.alpha_lo - JUMP_TOL <= alpha < segment.alpha_hi:
                return segment.lmp
        last = self.segments[-1]
        if alpha <= last.alpha_hi + JUMP_TOL:
            return last.lmp
        raise ValueError(f"curtailment {alpha} is beyond the traced range [0, {last.alpha_hi}]")

    def violations(self) -> List[str]:
        """Lists broken staircase invariants (empty for a well formed profile)."""
        problems = []
        if self.segments and abs(self.segments[0].alpha_lo) > JUMP_TOL:
            problems.append(f"first segment starts at {self.segments[0].alpha_lo}, not 0")
        for previous, current in zip(self.segments, self.segments[1:]):
            if abs(previous.alpha_hi - current.alpha_lo) > JUMP_TOL:
                problems.append(f"gap or overlap between {previous.alpha_hi} and {current.alpha_lo}")
            if current.lmp < previous.lmp - _MONOTONE_TOL:
                problems.append(f"lmp decreases from {previous.lmp} to {current.lmp} at {current.alpha_lo}")
        if len(self.jump_points) > 2 * self.constraint_count:
            problems.append(f"{len(self.jump_points)} jumps exceed twice the {self.constraint_count} constraints")
        return problems

    def to_frame(self) -> pd.DataFrame:
        """Returns the segments as an ``alpha_lo, alpha_hi, lmp`` table."""
        return pd.DataFrame(list(self.segments), columns=list(Segment._fields))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bus": self.bus,
            "segments": [segment._asdict() for segment in self.segments],
            "jump_points": list(self.jump_points),
            "end": self.end,
            "feasibility_limit": self.feasibility_limit,
            "constraint_count": self.constraint_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StaircaseProfile":
        return cls(
            bus=int(data["bus"]),
            segments=tuple(
                Segment(float(item["alpha_lo"]), float(item["alpha_hi"]), float(item["lmp"]))
                for item in data["segments"]
            ),
            jump_points=tuple(float(value) for value in data["jump_points"]),
            end=float(data["end"]),
            feasibility_limit=float(data["feasibility_limit"]),
            constraint_count=int(data["constraint_count"]),
        )


@dataclass(frozen=True)
class CurtailmentResult:
    """Optimal single-bus curtailment and the points that were compared."""

    bus: int
    alpha_star: float
    profit: float
    lmp_before: float
    lmp_after: float
    aggregator_share: float
    evaluated_points: Tuple[Tuple[float, float, float], ...]
    """``(alpha, lmp, profit)`` at zero curtailment and at every jump point."""
    profile: Optional[StaircaseProfile] = field(default=None, compare=False, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bus": self.bus,
            "alpha_star": self.alpha_star,
            "profit": self.profit,
            "lmp_before": self.lmp_before,
            "lmp_after": self.lmp_after,
            "aggregator_share": self.aggregator_share,
            "evaluated_points": [
                {"alpha": alpha, "lmp": lmp, "profit": profit} for alpha, lmp, profit in self.evaluated_points
            ],
        }


def constraint_count(net: Network) -> int:
    """Number of inequality rows of the clearing program, equality rows counted once."""
    return 2 * net.n + 2 * net.t + derived_matrices(net).flow_space_rank


def _share(net: Network, bus: int) -> Tuple[int, float]:
    position = net.bus_position(bus)
    return position, float(net.aggregator_share[position])


def feasibility_limit(net: Network, bus: int) -> float:
    """Largest curtailment at ``bus`` (capped at its share) for which clearing is feasible.

    Solved directly as ``max a`` over flows and the curtailment ``a``.

    Raises:
        ClearingInfeasibleError: If clearing is infeasible already at zero curtailment.
    """
    position, share = _share(net, bus)
    base = build_clearing_lp(net)
    column = np.zeros((base.n_rows, 1))
    column[position, 0] = 1.0
    lp = LinearProgram(
        objective=np.concatenate([np.zeros(base.n_vars), [-1.0]]),
        matrix=np.hstack([base.matrix, column]),
        row_lo=base.row_lo,
        row_hi=base.row_hi,
        var_lo=np.concatenate([base.var_lo, [0.0]]),
        var_hi=np.concatenate([base.var_hi, [share]]),
    )
    solution = solve(lp)
    if not solution.is_optimal:
        raise ClearingInfeasibleError(f"clearing is infeasible at zero curtailment ({solution.status})")
    limit = float(min(max(solution.primal[-1], 0.0), share))
    logger.debug("Feasibility limit at bus %d: %.12g", bus, limit)
    return limit


def _ranging_step(net: Network, position: int, alpha: float) -> float:
    curtailment = np.zeros(net.n)
    curtailment[position] = alpha
    lp = build_clearing_lp(net, curtailment)
    solution = solve(lp)
    if not solution.is_optimal:
        raise ClearingInfeasibleError(f"clearing is infeasible at curtailment {alpha} on bus position {position}")
    shift = np.zeros(lp.n_rows)
    shift[position] = -1.0
    return rhs_ranging(lp, solution, shift).step


def next_jump(net: Network, bus: int, alpha0: float, end: Optional[float] = None) -> Optional[float]:
    """Finds the smallest curtailment above ``alpha0`` where the binding set changes.

    Args:
        net (Network): A valid network.
        bus (int): Id of the curtailing bus.
        alpha0 (float): Current curtailment.
        end (Optional[float]): Upper end of the search; defaults to
            ``min(share, feasibility limit)``.

    Returns:
        Optional[float]: The next jump point, or None when none exists before ``end``.

    Raises:
        DegenerateBasisError: If the basis stays degenerate after one nudge of ``alpha0``.
    """
    position, share = _share(net, bus)
    if end is None:
        end = min(share, feasibility_limit(net, bus))
    if alpha0 >= end - JUMP_TOL:
        return None

    start = alpha0
    step = _ranging_step(net, position, start)
    if step <= JUMP_TOL:
        start = alpha0 + DEGENERACY_NUDGE
        if start >= end - JUMP_TOL:
            return None
        logger.debug("Degenerate basis at alpha=%.12g on bus %d; nudging", alpha0, bus)
        step = _ranging_step(net, position, start)
        if step <= JUMP_TOL:
            raise DegenerateBasisError(f"basis stays degenerate at curtailment {alpha0} on bus {bus}")

    candidate = start + step
    if not np.isfinite(candidate) or candidate > end + JUMP_TOL:
        return None
    return float(min(candidate, end))


def trace_staircase(net: Network, bus: int, alpha_max: Optional[float] = None) -> StaircaseProfile:
    """Traces the LMP staircase of ``bus`` from zero curtailment.

    Args:
        net (Network): A valid network that clears at zero curtailment.
        bus (int): Id of the curtailing bus.
        alpha_max (Optional[float]): Where to stop; defaults to the bus's aggregator share.

    Returns:
        StaircaseProfile: Segments with their midpoint LMPs and every jump point visited.

    Raises:
        StaircaseError: If tracing stops making progress.
    """
    position, share = _share(net, bus)
    limit = feasibility_limit(net, bus)
    end = min(share, limit)
    stop = end if alpha_max is None else min(end, max(float(alpha_max), 0.0))

    jumps: List[float] = []
    alpha = 0.0
    for _ in range(MAX_STAIRCASE_STEPS):
        upcoming = next_jump(net, bus, alpha, end=end)
        if upcoming is None or upcoming > stop + JUMP_TOL:
            break
        if upcoming <= alpha:
            raise StaircaseError(f"staircase tracing stalled at curtailment {alpha} on bus {bus}")
        jumps.append(upcoming)
        logger.debug("Jump at alpha=%.12g on bus %d", upcoming, bus)
        if upcoming >= stop - JUMP_TOL:
            break
        alpha = upcoming
    else:
        raise StaircaseError(f"staircase tracing exceeded {MAX_STAIRCASE_STEPS} jumps on bus {bus}")

    breakpoints = [0.0] + [jump for jump in jumps if jump < stop - JUMP_TOL] + [stop]
    segments: List[Segment] = []
    for low, high in zip(breakpoints, breakpoints[1:]):
        curtailment = np.zeros(net.n)
        curtailment[position] = 0.5 * (low + high)
        lmp = float(clear_market(net, curtailment).lmps[position])
        if segments and abs(segments[-1].lmp - lmp) <= _LMP_MERGE_TOL:
            segments[-1] = segments[-1]._replace(alpha_hi=high)
        else:
            segments.append(Segment(low, high, lmp))

    profile = StaircaseProfile(
        bus=bus,
        segments=tuple(segments),
        jump_points=tuple(jumps),
        end=stop,
        feasibility_limit=limit,
        constraint_count=constraint_count(net),
    )
    logger.info("Traced %d segments and %d jumps for bus %d up to %.6g", len(segments), len(jumps), bus, stop)
    return profile


def optimize_single_bus(
    net: Network, bus: int, lambda_bounds: Optional[Tuple[float, float]] = None
) -> CurtailmentResult:
    """Finds the profit-maximizing curtailment of the aggregator on ``bus``.

    The profit ``lmp(alpha) * (share - alpha) - lmp(0) * share`` is evaluated with
    aggregator-favorable duals at zero curtailment, at every jump point and at the
    end of the staircase. Ties go to the smaller curtailment.

    Raises:
        InvalidCurtailmentError: If the bus holds no aggregator generation.
    """
    position, share = _share(net, bus)
    if share <= 0:
        raise InvalidCurtailmentError(f"bus {bus} holds no aggregator generation")

    profile = trace_staircase(net, bus)
    candidates = sorted({0.0, *profile.jump_points, profile.end})

    def favorable_lmp(alpha: float) -> float:
        curtailment = np.zeros(net.n)
        curtailment[position] = alpha
        outcome = favorable_outcome(net, curtailment, target_buses=[bus], lambda_bounds=lambda_bounds)
        return float(outcome.lmps[position])

    lmp_before = favorable_lmp(0.0)
    evaluated = []
    best = (0.0, lmp_before, 0.0)
    for alpha in candidates:
        lmp = lmp_before if alpha == 0.0 else favorable_lmp(alpha)
        profit = lmp * (share - alpha) - lmp_before * share
        evaluated.append((alpha, lmp, profit))
        if profit > best[2] + _PROFIT_TIE_TOL:
            best = (alpha, lmp, profit)

    alpha_star, lmp_after, profit = best
    logger.info("Bus %d: alpha*=%.6g profit=%.6g (%d points)", bus, alpha_star, profit, len(evaluated))
    return CurtailmentResult(
        bus=bus,
        alpha_star=alpha_star,
        profit=profit,
        lmp_before=lmp_before,
        lmp_after=lmp_after,
        aggregator_share=share,
        evaluated_points=tuple(evaluated),
        profile=profile,
    )
