"""Network representation, validation and derived DC power flow matrices.

A :class:`Network` is an immutable description of buses and lines. Every solver
reads it through :func:`derived_matrices`, which builds (and caches) the
incidence matrix ``B``, the shift factor matrix ``G`` and the flow space matrix
``H`` whose rows span the orthogonal complement of ``range(G)``.

Sign conventions:

* line flow is positive in the ``from_bus -> to_bus`` direction;
* ``B[from, l] = +1`` and ``B[to, l] = -1``, so ``p - alpha - d + redispatch = B f``.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from .constants import CASE_FORMAT_VERSION, DEFAULT_REDISPATCH_HI, DEFAULT_REDISPATCH_LO
from .exceptions import CaseFormatError, DegenerateNetworkError, InvalidCurtailmentError
from .utils import FormatCompatibility, format_compatibility

__all__ = [
    "Bus",
    "Line",
    "Network",
    "DerivedMatrices",
    "validate_network",
    "is_radial",
    "incidence_matrix",
    "shift_factors",
    "flow_space_matrix",
    "derived_matrices",
    "check_curtailment",
    "scale_demand",
    "default_lambda_bounds",
    "network_from_dict",
    "network_to_dict",
    "load_case",
    "save_case",
]

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Absolute slack used when checking data invariants.
_DATA_TOL = 1e-9


@dataclass(frozen=True)
class Bus:
    """One bus of the network with its offer, dispatch and aggregator data."""

    id: int
    cost: float
    """Offer price in $/MWh."""
    generation: float
    """Dispatched generation in MW."""
    demand: float
    """Demand in MW."""
    redispatch_lo: float = DEFAULT_REDISPATCH_LO
    """Lowest ex-post redispatch in MW (<= 0)."""
    redispatch_hi: float = DEFAULT_REDISPATCH_HI
    """Highest ex-post redispatch in MW (>= 0)."""
    aggregator_share: float = 0.0
    """Generation in MW controlled by the aggregator at this bus."""


@dataclass(frozen=True)
class Line:
    """A transmission line oriented from ``from_bus`` to ``to_bus``."""

    id: int
    from_bus: int
    to_bus: int
    reactance: float
    flow_lo: float
    flow_hi: float


@dataclass(frozen=True)
class Network:
    """Immutable network: ordered buses, ordered lines and the slack bus."""

    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    slack_bus: int
    shift_factors_override: Optional[Tuple[Tuple[float, ...], ...]] = None
    """Explicit t x n shift factor matrix replacing the reactance based one."""
    lambda_bounds: Optional[Tuple[float, float]] = None
    """Prior [lo, hi] LMP bounds; defaults to the cost range when unset."""
    demand_scale: float = 1.0
    """Demand multiplier suggested by the case file, not yet applied to the demands."""
    applied_demand_scale: float = field(default=1.0, compare=False)
    """Product of the multipliers already applied to the demands."""
    name: str = field(default="", compare=False)

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def t(self) -> int:
        return len(self.lines)

    @property
    def bus_ids(self) -> Tuple[int, ...]:
        return tuple(bus.id for bus in self.buses)

    def bus_position(self, bus_id: int) -> int:
        """Returns the row of ``bus_id`` in every bus indexed vector.

        Raises:
            KeyError: If the bus does not exist.
        """
        for position, bus in enumerate(self.buses):
            if bus.id == bus_id:
                return position
        raise KeyError(f"Unknown bus id {bus_id!r}")

    def line_position(self, line_id: int) -> int:
        """Returns the column of ``line_id`` in every line indexed vector."""
        for position, line in enumerate(self.lines):
            if line.id == line_id:
                return position
        raise KeyError(f"Unknown line id {line_id!r}")

    def _bus_vector(self, attribute: str) -> FloatArray:
        return np.array([getattr(bus, attribute) for bus in self.buses], dtype=float)

    def _line_vector(self, attribute: str) -> FloatArray:
        return np.array([getattr(line, attribute) for line in self.lines], dtype=float)

    @property
    def costs(self) -> FloatArray:
        return self._bus_vector("cost")

    @property
    def generation(self) -> FloatArray:
        return self._bus_vector("generation")

    @property
    def demand(self) -> FloatArray:
        return self._bus_vector("demand")

    @property
    def redispatch_lo(self) -> FloatArray:
        return self._bus_vector("redispatch_lo")

    @property
    def redispatch_hi(self) -> FloatArray:
        return self._bus_vector("redispatch_hi")

    @property
    def aggregator_share(self) -> FloatArray:
        return self._bus_vector("aggregator_share")

    @property
    def flow_lo(self) -> FloatArray:
        return self._line_vector("flow_lo")

    @property
    def flow_hi(self) -> FloatArray:
        return self._line_vector("flow_hi")

    @property
    def reactances(self) -> FloatArray:
        return self._line_vector("reactance")

    @property
    def aggregator_buses(self) -> Tuple[int, ...]:
        """Ids of the buses where the aggregator holds generation."""
        return tuple(bus.id for bus in self.buses if bus.aggregator_share > 0)

    def curtailment(self, values: Optional[Mapping[int, float]] = None) -> FloatArray:
        """Builds a curtailment vector from a ``{bus_id: MW}`` mapping.

        Args:
            values (Optional[Mapping[int, float]]): Curtailment per bus id; other buses get 0.

        Returns:
            FloatArray: The length-n curtailment vector.
        """
        alpha = np.zeros(self.n)
        for bus_id, value in (values or {}).items():
            alpha[self.bus_position(bus_id)] = float(value)
        return alpha

    def graph(self) -> nx.MultiGraph:
        """Returns the undirected multigraph of the network keyed by line position."""
        graph = nx.MultiGraph()
        graph.add_nodes_from(self.bus_ids)
        for position, line in enumerate(self.lines):
            graph.add_edge(line.from_bus, line.to_bus, key=position)
        return graph


@dataclass(frozen=True)
class DerivedMatrices:
    """Incidence (n x t), shift factors (t x n) and flow space ((t - rank G) x t) matrices."""

    incidence: FloatArray
    shift_factors: FloatArray
    flow_space: FloatArray

    @property
    def flow_space_rank(self) -> int:
        return int(self.flow_space.shape[0])


def validate_network(net: Network) -> List[str]:
    """Checks every network invariant.

    Args:
        net (Network): The network to check.

    Returns:
        List[str]: Human readable violations, empty when the network is valid.
    """
    violations: List[str] = []

    if not net.buses:
        violations.append("network has no buses")
        return violations

    seen_buses = set()
    for bus in net.buses:
        if bus.id in seen_buses:
            violations.append(f"bus {bus.id}: duplicate bus id")
        seen_buses.add(bus.id)
        if not bus.redispatch_lo <= 0.0 <= bus.redispatch_hi:
            violations.append(f"bus {bus.id}: redispatch bounds must satisfy redispatch_lo <= 0 <= redispatch_hi")
        if bus.cost < 0 or bus.generation < 0 or bus.demand < 0:
            violations.append(f"bus {bus.id}: cost, generation and demand must be nonnegative")
        if not -_DATA_TOL <= bus.aggregator_share <= bus.generation + _DATA_TOL:
            violations.append(f"bus {bus.id}: aggregator_share must lie in [0, generation]")

    if net.slack_bus not in seen_buses:
        violations.append(f"slack bus {net.slack_bus} does not exist")

    seen_lines = set()
    for line in net.lines:
        if line.id in seen_lines:
            violations.append(f"line {line.id}: duplicate line id")
        seen_lines.add(line.id)
        if line.flow_lo > line.flow_hi:
            violations.append(f"line {line.id}: flow_lo exceeds flow_hi")
        if line.from_bus == line.to_bus:
            violations.append(f"line {line.id}: from_bus equals to_bus")
        if not line.reactance > 0:
            violations.append(f"line {line.id}: reactance must be positive")
        for endpoint in (line.from_bus, line.to_bus):
            if endpoint not in seen_buses:
                violations.append(f"line {line.id}: unknown bus {endpoint}")

    if net.shift_factors_override is not None:
        shape = np.shape(np.asarray(net.shift_factors_override, dtype=float))
        if shape != (net.t, net.n) and not (net.t == 0 and shape[0] == 0):
            violations.append(f"shift_factors must be {net.t} x {net.n}, got {shape}")

    if net.lambda_bounds is not None and net.lambda_bounds[0] > net.lambda_bounds[1]:
        violations.append("lambda_bounds: lower bound exceeds upper bound")

    if not net.demand_scale > 0:
        violations.append("demand_scale must be positive")

    # Connectivity is only meaningful once every endpoint is known.
    if not any("unknown bus" in violation for violation in violations) and not nx.is_connected(net.graph()):
        violations.append("network is not connected")

    return violations


def is_radial(net: Network) -> bool:
    """Returns True when the network is a tree (t = n - 1 and acyclic)."""
    return net.t == net.n - 1 and nx.is_tree(net.graph())


def incidence_matrix(net: Network) -> FloatArray:
    """Builds the n x t link-to-node incidence matrix.

    Args:
        net (Network): A valid network.

    Returns:
        FloatArray: ``B`` with ``+1`` at the from bus and ``-1`` at the to bus of each line.
    """
    incidence = np.zeros((net.n, net.t))
    for position, line in enumerate(net.lines):
        incidence[net.bus_position(line.from_bus), position] = 1.0
        incidence[net.bus_position(line.to_bus), position] = -1.0
    return incidence


def shift_factors(net: Network) -> FloatArray:
    """Computes the t x n generation shift factor matrix for the declared slack bus.

    The reduced susceptance system (slack row and column removed) is inverted and
    zero padded, so ``f = G (p - alpha - d)`` for any balanced injection vector.

    Args:
        net (Network): A connected network with positive reactances.

    Returns:
        FloatArray: ``G`` with an all-zero slack column.

    Raises:
        DegenerateNetworkError: If the reduced susceptance matrix is singular.
    """
    if net.shift_factors_override is not None:
        return np.array(net.shift_factors_override, dtype=float).reshape(net.t, net.n)

    if net.t == 0:
        return np.zeros((0, net.n))

    incidence = incidence_matrix(net)
    susceptance = np.diag(1.0 / net.reactances)
    bus_susceptance = incidence @ susceptance @ incidence.T

    slack = net.bus_position(net.slack_bus)
    keep = [position for position in range(net.n) if position != slack]

    angles = np.zeros((net.n, net.n))
    if keep:
        reduced = bus_susceptance[np.ix_(keep, keep)]
        try:
            reduced_inverse = linalg.solve(reduced, np.eye(len(keep)), assume_a="sym")
        except linalg.LinAlgError as exc:
            raise DegenerateNetworkError(f"singular reduced susceptance matrix: {exc}") from exc
        if not np.all(np.isfinite(reduced_inverse)):
            raise DegenerateNetworkError("reduced susceptance matrix is numerically singular")
        angles[np.ix_(keep, keep)] = reduced_inverse

    return susceptance @ incidence.T @ angles


def _spanning_tree_lines(net: Network) -> List[int]:
    graph = net.graph()
    return [key for _, _, key in nx.minimum_spanning_edges(graph, algorithm="kruskal", keys=True, data=False)]


def flow_space_matrix(net: Network) -> FloatArray:
    """Builds ``H`` whose rows span the orthogonal complement of ``range(G)``.

    With reactances every row is one fundamental cycle of a Kruskal spanning tree:
    the chord contributes ``+x`` and each tree line on the way back contributes
    ``+x`` or ``-x`` depending on whether it is walked along its orientation.
    An explicit shift factor matrix falls back to an orthonormal null space basis.

    Args:
        net (Network): A valid network.

    Returns:
        FloatArray: The (t - rank G) x t flow space matrix.
    """
    if net.t == 0:
        return np.zeros((0, 0))

    if net.shift_factors_override is not None:
        basis = linalg.null_space(shift_factors(net).T)
        return np.ascontiguousarray(basis.T)

    tree_lines = _spanning_tree_lines(net)
    tree = nx.Graph()
    tree.add_nodes_from(net.bus_ids)
    for position in tree_lines:
        line = net.lines[position]
        tree.add_edge(line.from_bus, line.to_bus, position=position)

    in_tree = set(tree_lines)
    chords = [position for position in range(net.t) if position not in in_tree]
    rows = np.zeros((len(chords), net.t))
    for row, chord in enumerate(chords):
        line = net.lines[chord]
        rows[row, chord] = line.reactance
        path = nx.shortest_path(tree, line.to_bus, line.from_bus)
        for start, end in zip(path[:-1], path[1:]):
            position = tree.edges[start, end]["position"]
            tree_line = net.lines[position]
            sign = 1.0 if tree_line.from_bus == start else -1.0
            rows[row, position] += sign * tree_line.reactance

    return rows


def _read_only(array: FloatArray) -> FloatArray:
    array.setflags(write=False)
    return array


@lru_cache(maxsize=64)
def derived_matrices(net: Network) -> DerivedMatrices:
    """Returns the cached incidence, shift factor and flow space matrices of ``net``."""
    matrices = DerivedMatrices(
        incidence=_read_only(incidence_matrix(net)),
        shift_factors=_read_only(shift_factors(net)),
        flow_space=_read_only(flow_space_matrix(net)),
    )
    logger.debug(
        "Derived matrices for %r: n=%d t=%d flow space rows=%d",
        net.name,
        net.n,
        net.t,
        matrices.flow_space_rank,
    )
    return matrices


def check_curtailment(net: Network, alpha: Union[Sequence[float], FloatArray, None]) -> FloatArray:
    """Validates a curtailment vector against ``0 <= alpha <= aggregator_share``.

    Args:
        net (Network): The network the curtailment applies to.
        alpha (Union[Sequence[float], FloatArray, None]): Curtailment per bus; None means no curtailment.

    Returns:
        FloatArray: The curtailment as a float vector.

    Raises:
        InvalidCurtailmentError: On a wrong length or an out-of-range entry.
    """
    if alpha is None:
        return np.zeros(net.n)

    vector = np.asarray(alpha, dtype=float).reshape(-1)
    if vector.shape != (net.n,):
        raise InvalidCurtailmentError(f"curtailment must have {net.n} entries, got {vector.shape[0]}")

    share = net.aggregator_share
    for position, (value, limit) in enumerate(zip(vector, share)):
        if not -_DATA_TOL <= value <= limit + _DATA_TOL:
            bus_id = net.buses[position].id
            raise InvalidCurtailmentError(f"curtailment {value} at bus {bus_id} is outside [0, {limit}]")

    return np.clip(vector, 0.0, share)


def scale_demand(net: Network, factor: float) -> Network:
    """Returns a copy of ``net`` with every demand multiplied by ``factor``.

    The copy has no pending ``demand_scale``; the factor moves to ``applied_demand_scale``
    so that saving and reloading the copy does not scale it twice.
    """
    if factor == 1.0:
        return net
    buses = tuple(replace(bus, demand=bus.demand * factor) for bus in net.buses)
    return replace(net, buses=buses, demand_scale=1.0, applied_demand_scale=net.applied_demand_scale * factor)


def default_lambda_bounds(
    net: Network, lambda_lo: Optional[float] = None, lambda_hi: Optional[float] = None
) -> Tuple[float, float]:
    """Resolves the prior LMP bounds: explicit values, then the case file, then the cost range."""
    if net.lambda_bounds is not None:
        low, high = net.lambda_bounds
    else:
        costs = net.costs
        low, high = float(costs.min()), float(costs.max())
    if lambda_lo is not None:
        low = float(lambda_lo)
    if lambda_hi is not None:
        high = float(lambda_hi)
    return low, high


# --- Case files ---


def _check_format_version(data: Mapping[str, Any]) -> None:
    declared = str(data.get("format_version", CASE_FORMAT_VERSION))
    try:
        compatibility = format_compatibility(CASE_FORMAT_VERSION, declared)
    except ValueError as exc:
        raise CaseFormatError(f"invalid format_version {declared!r}") from exc

    if not compatibility.readable:
        raise CaseFormatError(f"unsupported case format {declared!r} (supported: {CASE_FORMAT_VERSION})")
    if compatibility == FormatCompatibility.NEWER:
        logger.warning("Case format %s is newer than the supported %s", declared, CASE_FORMAT_VERSION)


def network_from_dict(data: Mapping[str, Any], name: str = "") -> Network:
    """Builds a network from a decoded case document.

    Args:
        data (Mapping[str, Any]): The decoded JSON case.
        name (str): Name recorded on the network when the case has none.

    Returns:
        Network: The network (not yet validated).

    Raises:
        CaseFormatError: If required keys are missing or hold values of the wrong type.
    """
    if not isinstance(data, Mapping):
        raise CaseFormatError("case document must be a JSON object")

    _check_format_version(data)

    try:
        buses = tuple(
            Bus(
                id=int(entry["id"]),
                cost=float(entry["cost"]),
                generation=float(entry["generation"]),
                demand=float(entry["demand"]),
                redispatch_lo=float(entry.get("redispatch_lo", DEFAULT_REDISPATCH_LO)),
                redispatch_hi=float(entry.get("redispatch_hi", DEFAULT_REDISPATCH_HI)),
                aggregator_share=float(entry.get("aggregator_share", 0.0)),
            )
            for entry in data["buses"]
        )
        lines = tuple(
            Line(
                id=int(entry["id"]),
                from_bus=int(entry["from"]),
                to_bus=int(entry["to"]),
                reactance=float(entry.get("reactance", 1.0)),
                flow_lo=float(entry["flow_lo"]),
                flow_hi=float(entry["flow_hi"]),
            )
            for entry in data.get("lines", [])
        )
        slack_bus = int(data["slack_bus"])

        override = data.get("shift_factors")
        if override is not None:
            override = tuple(tuple(float(value) for value in row) for row in override)

        bounds = data.get("lambda_bounds")
        if bounds is not None:
            low, high = bounds
            bounds = (float(low), float(high))

        demand_scale = float(data.get("demand_scale", 1.0))
    except KeyError as exc:
        raise CaseFormatError(f"missing case key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise CaseFormatError(f"malformed case value: {exc}") from exc

    return Network(
        buses=buses,
        lines=lines,
        slack_bus=slack_bus,
        shift_factors_override=override,
        lambda_bounds=bounds,
        demand_scale=demand_scale,
        name=str(data.get("name", name)),
    )


def network_to_dict(net: Network) -> Dict[str, Any]:
    """Serializes ``net`` into the case document layout."""
    data: Dict[str, Any] = {
        "format_version": CASE_FORMAT_VERSION,
        "name": net.name,
        "slack_bus": net.slack_bus,
        "buses": [
            {
                "id": bus.id,
                "cost": bus.cost,
                "generation": bus.generation,
                "demand": bus.demand,
                "redispatch_lo": bus.redispatch_lo,
                "redispatch_hi": bus.redispatch_hi,
                "aggregator_share": bus.aggregator_share,
            }
            for bus in net.buses
        ],
        "lines": [
            {
                "id": line.id,
                "from": line.from_bus,
                "to": line.to_bus,
                "reactance": line.reactance,
                "flow_lo": line.flow_lo,
                "flow_hi": line.flow_hi,
            }
            for line in net.lines
        ],
    }
    if net.shift_factors_override is not None:
        data["shift_factors"] = [list(row) for row in net.shift_factors_override]
    if net.lambda_bounds is not None:
        data["lambda_bounds"] = list(net.lambda_bounds)
    if net.demand_scale != 1.0:
        data["demand_scale"] = net.demand_scale
    return data


def load_case(path: Union[str, Path]) -> Network:
    """Reads a UTF-8 JSON case file.

    Raises:
        CaseFormatError: If the file is missing or unreadable, not UTF-8 JSON, or not a case document.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CaseFormatError(f"case file not found: {str(path)!r}") from exc
    except OSError as exc:
        raise CaseFormatError(f"case file {str(path)!r} cannot be read: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise CaseFormatError(f"case file {str(path)!r} is not valid UTF-8: {exc.reason}") from exc
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"case file {str(path)!r} is not valid JSON: {exc}") from exc

    logger.info("Loaded case %s", path)
    return network_from_dict(data, name=path.stem)


def save_case(net: Network, path: Union[str, Path]) -> None:
    """Writes ``net`` as a UTF-8 JSON case file."""
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n", encoding="utf-8")
