"""Bundled case files and seeded network generators."""

import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .constants import CASES_DIR
from .exceptions import CaseFormatError
from .model import Bus, Line, Network, load_case, shift_factors

__all__ = [
    "bundled_cases",
    "case_path",
    "resolve_case",
    "load_bundled",
    "random_meshed_network",
    "random_radial_network",
    "line_network",
]

logger = logging.getLogger(__name__)


def bundled_cases() -> List[str]:
    """Names of the case files shipped with the package."""
    return sorted(path.stem for path in CASES_DIR.glob("*.json"))


def case_path(name: str) -> Path:
    """Path of a bundled case, with or without the ``.json`` suffix.

    Raises:
        CaseFormatError: If no bundled case has that name.
    """
    stem = name[:-5] if name.endswith(".json") else name
    path = CASES_DIR / f"{stem}.json"
    if not path.is_file():
        raise CaseFormatError(f"no bundled case named {name!r} (available: {', '.join(bundled_cases())})")
    return path


def resolve_case(value: Union[str, Path]) -> Path:
    """Resolves ``--case``: an existing file first, then a bundled case name."""
    path = Path(value)
    if path.is_file():
        return path
    try:
        return case_path(path.name)
    except CaseFormatError:
        raise CaseFormatError(f"case file not found: {str(value)!r}") from None


def load_bundled(name: str) -> Network:
    return load_case(case_path(name))


def _tree_parents(rng: np.random.Generator, n: int) -> List[int]:
    return [int(rng.integers(0, child)) for child in range(1, n)]


def random_meshed_network(
    seed: int, n: Optional[int] = None, extra_lines: Optional[int] = None, share: float = 10.0
) -> Network:
    """Random connected network whose clearing is feasible at zero curtailment.

    Offer costs are distinct. Line limits sit slightly above the flows of the
    ex-ante dispatch so redispatch tends to congest them. The bus with the
    largest generation gets ``min(share, generation)`` MW of aggregator generation.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9)) if n is None else n
    pairs = [(parent, child) for child, parent in enumerate(_tree_parents(rng, n), start=1)]
    extra_lines = int(rng.integers(0, n)) if extra_lines is None else extra_lines
    for _ in range(extra_lines):
        first, second = (int(value) for value in rng.choice(n, size=2, replace=False))
        if (first, second) not in pairs and (second, first) not in pairs:
            pairs.append((first, second))

    costs = 10.0 + 3.0 * rng.permutation(n) + np.round(rng.uniform(0.0, 1.0, n), 2)
    generation = np.round(rng.uniform(0.0, 20.0, n), 1)
    demand = np.round(rng.uniform(0.0, 20.0, n), 1)
    surplus = generation.sum() - demand.sum()
    if surplus > 0:
        demand[int(np.argmax(demand))] += surplus
    else:
        generation[int(np.argmax(generation))] -= surplus

    host = int(np.argmax(generation))
    buses = tuple(
        Bus(
            id=index + 1,
            cost=float(costs[index]),
            generation=float(generation[index]),
            demand=float(demand[index]),
            aggregator_share=float(min(share, generation[index])) if index == host else 0.0,
        )
        for index in range(n)
    )
    reactances = np.round(rng.uniform(0.05, 0.5, len(pairs)), 3)
    lines = tuple(
        Line(id=index + 1, from_bus=a + 1, to_bus=b + 1, reactance=float(x), flow_lo=-1e3, flow_hi=1e3)
        for index, ((a, b), x) in enumerate(zip(pairs, reactances))
    )
    net = Network(buses=buses, lines=lines, slack_bus=1, name=f"meshed-{seed}")

    flows = shift_factors(net) @ (generation - demand)
    limits = np.ceil((np.abs(flows) + rng.uniform(0.05, 1.0, len(lines))) * 1000.0) / 1000.0
    lines = tuple(replace(line, flow_lo=-float(limit), flow_hi=float(limit)) for line, limit in zip(lines, limits))
    return replace(net, lines=lines)


def random_radial_network(seed: int, n: int = 5, n_aggregators: int = 2) -> Network:
    """Random radial network whose MW data lie on a 0.1 lattice and costs are integers.

    Aggregator shares are 0.2 or 0.4 MW, so a curtailment grid with four steps per
    bus stays on the lattice of the tree dynamic program.
    """
    rng = np.random.default_rng(seed)
    parents = _tree_parents(rng, n)
    costs = rng.integers(10, 15, n).astype(float)
    generation = rng.integers(0, 30, n) / 10.0
    demand = rng.integers(0, 30, n) / 10.0

    hosts = [int(value) for value in rng.choice(n, size=min(n_aggregators, n), replace=False)]
    shares = np.zeros(n)
    for host in hosts:
        shares[host] = float(rng.choice([0.2, 0.4]))
        generation[host] = max(generation[host], 0.5)

    surplus = round(float(generation.sum() - demand.sum()), 1)
    if surplus > 0:
        demand[int(np.argmax(demand))] += surplus
    else:
        generation[int(np.argmax(generation))] -= surplus
    generation, demand = np.round(generation, 1), np.round(demand, 1)

    buses = tuple(
        Bus(
            id=index + 1,
            cost=float(costs[index]),
            generation=float(generation[index]),
            demand=float(demand[index]),
            redispatch_lo=-0.5,
            redispatch_hi=0.1,
            aggregator_share=float(shares[index]),
        )
        for index in range(n)
    )

    # Flow into each child equals the net demand of its subtree.
    subtree = demand - generation
    for child in range(n - 1, 0, -1):
        subtree[parents[child - 1]] += subtree[child]
    lines = []
    for child in range(1, n):
        limit = round(abs(float(subtree[child])) + 0.1 * int(rng.integers(1, 6)), 1)
        lines.append(
            Line(id=child, from_bus=parents[child - 1] + 1, to_bus=child + 1, reactance=0.1, flow_lo=-limit, flow_hi=limit)
        )
    return Network(buses=buses, lines=tuple(lines), slack_bus=1, name=f"radial-{seed}")


def line_network(n: int, share: float = 0.5, flow_limit: float = 1.0) -> Network:
    """A feeder of ``n`` buses with alternating generation and demand of 0.5 MW.

    Bus 1 is the slack and holds ``share`` MW of aggregator generation.
    """
    buses = tuple(
        Bus(
            id=index + 1,
            cost=10.0 if index % 2 == 0 else 12.0,
            generation=0.5 if index % 2 == 0 else 0.0,
            demand=0.0 if index % 2 == 0 else 0.5,
            redispatch_lo=-0.5,
            redispatch_hi=0.1,
            aggregator_share=share if index == 0 else 0.0,
        )
        for index in range(n)
    )
    lines = tuple(
        Line(id=index, from_bus=index, to_bus=index + 1, reactance=0.1, flow_lo=-flow_limit, flow_hi=flow_limit)
        for index in range(1, n)
    )
    return Network(buses=buses, lines=lines, slack_bus=1, name=f"line-{n}")
