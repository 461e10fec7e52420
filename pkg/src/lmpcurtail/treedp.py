"""Epsilon-accurate aggregator curtailment on radial networks.

The network is first reduced to a binary tree rooted at the slack bus. Every node
``i`` carries a state ``(lmp, flow, curtail)`` where ``flow`` is the power entering
``i`` from its parent, so the redispatch of ``i`` reads::

    injection(i) = sum(flow of children) - flow(i) - generation(i) + curtail(i) + demand(i)

The clearing optimality conditions then only couple a node to its children, and
a bottom-up dynamic program over discretized states finds a curtailment whose
constraint violations and objective loss are both bounded by ``eps``.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from math import ceil
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .constants import DEFAULT_GRID_BUDGET, MW_QUANTA
from .exceptions import ConfigError, DpInfeasibleError, GridBudgetError, NotRadialError
from .market import MarketOutcome, favorable_outcome
from .model import Network, default_lambda_bounds, is_radial

__all__ = [
    "TreeNode",
    "BinaryTreeNetwork",
    "NodeState",
    "DiscretizationGrid",
    "DpSolution",
    "Residual",
    "to_binary_tree",
    "grid_axis",
    "delta_from_eps",
    "price_delta_from_eps",
    "build_grids",
    "dp_solve",
    "violation_report",
    "tree_state_from_outcome",
]

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Slack for float noise when comparing relaxed constraints on grid values.
_WINDOW_SLACK = 1e-9
# Relative tolerance of the lattice detection.
_LATTICE_TOL = 1e-6
# Elements per block when building the edge envelopes.
_ENVELOPE_BLOCK = 4_000_000
_BOUND_TOL = 1e-9


@dataclass(frozen=True)
class TreeNode:
    """One node of the binary tree; dummy nodes have ``bus`` None and no injection."""

    index: int
    parent: Optional[int]
    children: Tuple[int, ...]
    bus: Optional[int]
    cost: float
    generation: float
    demand: float
    share: float
    redispatch_lo: float
    redispatch_hi: float
    flow_lo: float
    """Lower limit of the flow entering this node from its parent."""
    flow_hi: float
    line: Optional[int]
    """Id of the original line to the parent, None for the root and dummy edges."""
    orientation: int
    """+1 when the original line runs parent -> node, -1 when it runs node -> parent."""

    @property
    def is_dummy(self) -> bool:
        return self.bus is None


@dataclass(frozen=True, eq=False)
class BinaryTreeNetwork:
    """A radial network re-rooted at its slack bus with at most two children per node.

    ``nodes`` are in breadth-first order, so every parent precedes its children.
    ``flow_boxes`` are the flow ranges each node can carry in any feasible clearing.
    """

    nodes: Tuple[TreeNode, ...]
    network: Network
    bus_to_node: Mapping[int, int]
    dummy_limit: float
    flow_boxes: Tuple[Tuple[float, float], ...]

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def n_dummies(self) -> int:
        return sum(1 for node in self.nodes if node.is_dummy)

    def node_for_bus(self, bus: int) -> TreeNode:
        return self.nodes[self.bus_to_node[bus]]

    def curtailment_to_nodes(self, alpha: Sequence[float]) -> FloatArray:
        """Maps a per-bus curtailment vector onto the tree nodes (dummies get 0)."""
        values = np.zeros(self.size)
        for position, bus in enumerate(self.network.bus_ids):
            values[self.bus_to_node[bus]] = alpha[position]
        return values

    def curtailment_from_nodes(self, values: Sequence[float]) -> FloatArray:
        """Maps per-node curtailments back onto the bus order of the network."""
        alpha = np.zeros(self.network.n)
        for position, bus in enumerate(self.network.bus_ids):
            alpha[position] = values[self.bus_to_node[bus]]
        return alpha


class NodeState(NamedTuple):
    lmp: float
    flow: float
    curtail: float


class Residual(NamedTuple):
    """Signed residual of one constraint; values <= 0 are satisfied."""

    constraint: str
    node: int
    value: float


@dataclass(frozen=True, eq=False)
class DiscretizationGrid:
    """Per-node grids; the LMP axis is shared by every node."""

    lambdas: FloatArray
    flows: Tuple[FloatArray, ...]
    curtails: Tuple[FloatArray, ...]
    delta: float
    price_delta: Optional[float] = None
    """Spacing of the LMP axis, ``delta`` when None."""

    def node_size(self, index: int) -> int:
        return int(self.lambdas.shape[0] * self.flows[index].shape[0] * self.curtails[index].shape[0])

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(self.node_size(index) for index in range(len(self.flows)))

    def nearest(self, index: int, state: NodeState) -> NodeState:
        """Rounds ``state`` to the closest grid point of node ``index``."""

        def closest(axis: FloatArray, value: float) -> float:
            return float(axis[np.argmin(np.abs(axis - value))])

        return NodeState(
            closest(self.lambdas, state.lmp),
            closest(self.flows[index], state.flow),
            closest(self.curtails[index], state.curtail),
        )

    def covers(self, index: int, state: NodeState) -> bool:
        """True when some grid point of node ``index`` is within the axis spacings of ``state``."""
        point = self.nearest(index, state)
        price_delta = self.delta if self.price_delta is None else self.price_delta
        if abs(point.lmp - state.lmp) > price_delta + _BOUND_TOL:
            return False
        return max(abs(point.flow - state.flow), abs(point.curtail - state.curtail)) <= self.delta + _BOUND_TOL


@dataclass(frozen=True)
class DpSolution:
    """Result of :func:`dp_solve`."""

    states: Tuple[NodeState, ...]
    objective: float
    """Aggregator revenue ``sum lmp * (share - curtail)`` of the chosen states."""
    baseline: float
    """Revenue at zero curtailment with favorable LMPs."""
    epsilon: float
    delta: float
    price_delta: float
    max_violation: float
    work: int
    """Number of elementary table updates, a proxy for running time."""
    lambda_bounds: Tuple[float, float]
    lambda_on_bound: bool
    tree: BinaryTreeNetwork = field(compare=False, repr=False)

    @property
    def profit(self) -> float:
        return self.objective - self.baseline

    @property
    def curtailment(self) -> FloatArray:
        return self.tree.curtailment_from_nodes([state.curtail for state in self.states])

    def to_dict(self) -> Dict[str, Any]:
        nodes = []
        for node, state in zip(self.tree.nodes, self.states):
            nodes.append(
                {
                    "node": node.index,
                    "parent": node.parent,
                    "bus": node.bus,
                    "dummy": node.is_dummy,
                    "lmp": state.lmp,
                    "flow": state.flow,
                    "curtail": state.curtail,
                }
            )
        return {
            "objective": self.objective,
            "baseline": self.baseline,
            "profit": self.profit,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "price_delta": self.price_delta,
            "max_violation": self.max_violation,
            "work": self.work,
            "lambda_bounds": list(self.lambda_bounds),
            "lambda_on_bound": self.lambda_on_bound,
            "curtailment": {
                str(bus): float(value) for bus, value in zip(self.tree.network.bus_ids, self.curtailment)
            },
            "dummy_nodes": [node.index for node in self.tree.nodes if node.is_dummy],
            "nodes": nodes,
        }


@dataclass(frozen=True, eq=False)
class _NodeTable:
    value: FloatArray
    """Best subtree revenue per (lmp, flow) of the node."""
    alpha_arg: NDArray[np.int_]
    sums: FloatArray
    combined: FloatArray
    pairs: NDArray[np.int_]
    child_lambda_args: Tuple[NDArray[np.int_], ...]
    window_lo: FloatArray
    window_hi: FloatArray


# --- Binary tree reduction ---


def _dummy_limit(net: Network) -> float:
    return float(
        np.abs(net.generation).sum()
        + np.abs(net.demand).sum()
        + np.maximum(net.redispatch_hi, -net.redispatch_lo).sum()
    )


def _flow_boxes(nodes: Sequence[TreeNode]) -> Tuple[Tuple[float, float], ...]:
    boxes: List[Tuple[float, float]] = [(0.0, 0.0)] * len(nodes)
    for node in reversed(nodes):
        if node.parent is None:
            continue
        child_lo = sum(boxes[child][0] for child in node.children)
        child_hi = sum(boxes[child][1] for child in node.children)
        low = max(node.flow_lo, child_lo + node.demand - node.generation - node.redispatch_hi)
        high = min(node.flow_hi, child_hi + node.demand - node.generation + node.share - node.redispatch_lo)
        boxes[node.index] = (low, high)
    return tuple(boxes)


def to_binary_tree(net: Network) -> BinaryTreeNetwork:
    """Re-roots a radial network at its slack bus and splits high-degree nodes.

    A node with ``k > 2`` children gets two dummy children; the first takes the
    first half of the next power of two children and the second the rest, and
    the split repeats until every node has at most two children.

    Raises:
        NotRadialError: If the network has a cycle or parallel lines.
    """
    if not is_radial(net):
        raise NotRadialError()

    limit = _dummy_limit(net)
    adjacency: Dict[int, List[Tuple[int, int]]] = {bus: [] for bus in net.bus_ids}
    for position, line in enumerate(net.lines):
        adjacency[line.from_bus].append((line.to_bus, position))
        adjacency[line.to_bus].append((line.from_bus, position))

    def kids_of(bus: int, parent_bus: Optional[int]) -> List[Tuple[int, int]]:
        kids = [item for item in adjacency[bus] if item[0] != parent_bus]
        return sorted(kids, key=lambda item: net.bus_position(item[0]))

    # (parent, bus, line position, anchor bus, pending kids)
    records: List[Tuple[Optional[int], Optional[int], Optional[int], int, List[Tuple[int, int]]]] = []
    children: List[List[int]] = []
    queue: deque = deque()

    def add(parent, bus, line_position, anchor, pending) -> None:
        records.append((parent, bus, line_position, anchor, pending))
        children.append([])
        if parent is not None:
            children[parent].append(len(records) - 1)
        queue.append(len(records) - 1)

    add(None, net.slack_bus, None, net.slack_bus, kids_of(net.slack_bus, None))
    while queue:
        index = queue.popleft()
        _, _, _, anchor, pending = records[index]
        if len(pending) <= 2:
            for kid, position in pending:
                add(index, kid, position, kid, kids_of(kid, anchor))
        else:
            half = (1 << (len(pending) - 1).bit_length()) // 2
            add(index, None, None, anchor, pending[:half])
            add(index, None, None, anchor, pending[half:])

    nodes = []
    for index, (parent, bus, line_position, _, _) in enumerate(records):
        if bus is None:
            nodes.append(
                TreeNode(index, parent, tuple(children[index]), None, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -limit, limit, None, 0)
            )
            continue
        data = net.buses[net.bus_position(bus)]
        if line_position is None:
            flow_lo = flow_hi = 0.0
            line_id, orientation = None, 0
        else:
            line = net.lines[line_position]
            orientation = 1 if line.to_bus == bus else -1
            low, high = (line.flow_lo, line.flow_hi) if orientation == 1 else (-line.flow_hi, -line.flow_lo)
            flow_lo, flow_hi = max(low, -limit), min(high, limit)
            line_id = line.id
        nodes.append(
            TreeNode(
                index=index,
                parent=parent,
                children=tuple(children[index]),
                bus=bus,
                cost=data.cost,
                generation=data.generation,
                demand=data.demand,
                share=data.aggregator_share,
                redispatch_lo=data.redispatch_lo,
                redispatch_hi=data.redispatch_hi,
                flow_lo=flow_lo,
                flow_hi=flow_hi,
                line=line_id,
                orientation=orientation,
            )
        )

    bnet = BinaryTreeNetwork(
        nodes=tuple(nodes),
        network=net,
        bus_to_node={node.bus: node.index for node in nodes if node.bus is not None},
        dummy_limit=limit,
        flow_boxes=_flow_boxes(nodes),
    )
    logger.debug("Binary tree: %d nodes, %d dummies, dummy limit %.6g", bnet.size, bnet.n_dummies, limit)
    return bnet


# --- Discretization ---


def _lattice_quantum(values: Sequence[float]) -> Optional[float]:
    finite = np.array([value for value in values if np.isfinite(value)], dtype=float)
    for quantum in MW_QUANTA:
        ratios = finite / quantum
        if np.all(np.abs(ratios - np.round(ratios)) <= _LATTICE_TOL * np.maximum(1.0, np.abs(ratios))):
            return quantum
    return None


def _alignment(bnet: BinaryTreeNetwork, lambda_bounds: Tuple[float, float]) -> Optional[Tuple[float, float]]:
    """Finds lattices of the MW and price data, None when either is missing."""
    megawatts: List[float] = [bnet.dummy_limit]
    prices: List[float] = list(lambda_bounds)
    for node in bnet.nodes:
        megawatts.extend(
            (node.generation, node.demand, node.share, node.redispatch_lo, node.redispatch_hi, node.flow_lo, node.flow_hi)
        )
        if not node.is_dummy:
            prices.append(node.cost)
    mw_quantum = _lattice_quantum(megawatts)
    price_quantum = _lattice_quantum(prices)
    if mw_quantum is None or price_quantum is None:
        return None
    return mw_quantum, price_quantum


def _aligned_step(quantum: Optional[float], delta: float) -> float:
    if quantum is None:
        return delta
    return quantum / ceil(quantum / delta - _LATTICE_TOL)


def grid_axis(low: float, high: float, step: float) -> FloatArray:
    """Uniform points from ``low`` to ``high`` (both included) no more than ``step`` apart."""
    if high <= low:
        return np.array([low], dtype=float)
    count = int(ceil((high - low) / step - _LATTICE_TOL)) + 1
    return np.linspace(low, high, max(count, 2))


def delta_from_eps(
    bnet: BinaryTreeNetwork,
    eps: float,
    lambda_bounds: Optional[Tuple[float, float]] = None,
    aligned: Optional[bool] = None,
) -> float:
    """MW grid spacing that keeps every rounded constraint within ``eps``.

    On lattice-aligned data the optimum itself lies on the grid and the linear
    redispatch rows alone set ``delta = eps / 4``. Otherwise the spacing is
    ``eps / c`` with ``c`` the largest of the per-family rounding bounds:

    * redispatch rows move by one step per rounded flow or curtailment of the node, at most 4;
    * a node's complementarity product moves by that count times its largest cost margin;
    * edge products do not move, since nearest rounding keeps the sign of every LMP
      difference and a flow at its limit sits on a box end;
    * rounding curtailments down loses revenue only where the LMP box reaches below zero.

    Raises:
        ConfigError: If ``eps`` is not positive.
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    low, high = lambda_bounds if lambda_bounds is not None else default_lambda_bounds(bnet.network)
    if aligned is None:
        aligned = _alignment(bnet, (low, high)) is not None
    if aligned:
        return eps / 4.0

    constant = 4.0
    hosts = 0
    for node in bnet.nodes:
        if node.is_dummy:
            continue
        curtailed = node.share > 0
        hosts += curtailed
        moves = len(node.children) + (node.parent is not None) + curtailed
        constant = max(constant, moves * max(high - node.cost, node.cost - low))
    # Half of eps goes to the revenue lost on the LMP axis.
    constant = max(constant, 2.0 * hosts * max(0.0, -low))
    return eps / constant


def price_delta_from_eps(
    bnet: BinaryTreeNetwork,
    eps: float,
    lambda_bounds: Optional[Tuple[float, float]] = None,
    aligned: Optional[bool] = None,
) -> float:
    """LMP grid spacing that keeps the revenue of a rounded state within ``eps``.

    Offer costs are points of the LMP axis, so the spacing only enters the revenue
    ``sum lmp * (share - curtail)``, which moves by at most the spacing times the
    total aggregator share.

    Raises:
        ConfigError: If ``eps`` is not positive.
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if aligned is None:
        bounds = lambda_bounds if lambda_bounds is not None else default_lambda_bounds(bnet.network)
        aligned = _alignment(bnet, bounds) is not None
    if aligned:
        return eps / 4.0
    total = sum(node.share for node in bnet.nodes if not node.is_dummy)
    return eps / max(4.0, 2.0 * total)


def build_grids(
    bnet: BinaryTreeNetwork,
    delta: float,
    lambda_bounds: Optional[Tuple[float, float]] = None,
    mw_quantum: Optional[float] = None,
    price_quantum: Optional[float] = None,
    budget: int = DEFAULT_GRID_BUDGET,
    price_delta: Optional[float] = None,
) -> DiscretizationGrid:
    """Builds the per-node state grids.

    Every axis includes both ends of its box. The LMP axis also contains every
    offer cost inside the bounds. Nodes without aggregator generation get the
    single curtailment ``0``; the root gets the single flow ``0``.
    The LMP axis steps by ``price_delta`` when given and by ``delta`` otherwise.

    Raises:
        GridBudgetError: If a node would exceed ``budget`` states.
        DpInfeasibleError: If a node's feasible flow range is empty.
    """
    if delta <= 0:
        raise ConfigError(f"grid spacing must be positive, got {delta}")
    low, high = lambda_bounds if lambda_bounds is not None else default_lambda_bounds(bnet.network)
    mw_step = _aligned_step(mw_quantum, delta)
    price_step = _aligned_step(price_quantum, delta if price_delta is None else price_delta)

    lambdas = grid_axis(low, high, price_step)
    extra = [
        node.cost
        for node in bnet.nodes
        if not node.is_dummy
        and low <= node.cost <= high
        and np.min(np.abs(lambdas - node.cost)) > _BOUND_TOL
    ]
    if extra:
        lambdas = np.unique(np.concatenate([lambdas, extra]))

    flows, curtails = [], []
    for node in bnet.nodes:
        box_lo, box_hi = bnet.flow_boxes[node.index]
        if node.parent is None:
            flows.append(np.zeros(1))
        else:
            if box_lo > box_hi + _BOUND_TOL:
                raise DpInfeasibleError(f"node {node.index} has an empty flow range [{box_lo}, {box_hi}]")
            flows.append(grid_axis(box_lo, max(box_lo, box_hi), mw_step))
        if node.is_dummy or node.share <= 0:
            curtails.append(np.zeros(1))
        else:
            curtails.append(grid_axis(0.0, node.share, mw_step))

    grids = DiscretizationGrid(
        lambdas=lambdas, flows=tuple(flows), curtails=tuple(curtails), delta=delta, price_delta=price_delta
    )
    for index, size in enumerate(grids.sizes):
        if size > budget:
            raise GridBudgetError(
                f"node {index} needs {size} grid states, budget is {budget}; raise eps or the grid budget"
            )
    return grids


# --- Dynamic program ---


def _injection_window(node: TreeNode, lambdas: FloatArray, eps: float) -> Tuple[FloatArray, FloatArray]:
    """Relaxed range of the node's redispatch for each candidate LMP."""
    lower = np.full(lambdas.shape, node.redispatch_lo - eps)
    upper = np.full(lambdas.shape, node.redispatch_hi + eps)
    if node.is_dummy:
        return lower, upper
    margin = lambdas - node.cost
    rising = margin > 0
    lower[rising] = np.maximum(lower[rising], node.redispatch_hi - eps / margin[rising])
    falling = margin < 0
    upper[falling] = np.minimum(upper[falling], node.redispatch_lo + eps / -margin[falling])
    return lower, upper


def _edge_envelope(
    child: TreeNode, lambdas: FloatArray, flows: FloatArray, value: FloatArray, eps: float
) -> Tuple[FloatArray, NDArray[np.int_]]:
    """Best child value per (parent lmp, child flow) over child LMPs meeting the edge conditions."""
    count, width = lambdas.shape[0], flows.shape[0]
    gap_lo = child.flow_lo - flows
    gap_hi = child.flow_hi - flows
    envelope = np.empty((count, width))
    argument = np.empty((count, width), dtype=int)
    block = max(1, _ENVELOPE_BLOCK // max(1, count * width))
    for start in range(0, count, block):
        stop = min(count, start + block)
        spread = lambdas[start:stop, None] - lambdas[None, :]
        product = np.minimum(spread[:, :, None] * gap_lo, spread[:, :, None] * gap_hi)
        candidates = np.where(product >= -eps - _WINDOW_SLACK, value[None, :, :], -np.inf)
        envelope[start:stop] = candidates.max(axis=1)
        argument[start:stop] = candidates.argmax(axis=1)
    return envelope, argument


def _pair_sums(
    count: int, child_flows: Sequence[FloatArray], envelopes: Sequence[FloatArray]
) -> Tuple[FloatArray, FloatArray, NDArray[np.int_]]:
    """Children flow sums sorted ascending with the summed child values per parent LMP."""
    if not child_flows:
        return np.zeros(1), np.zeros((count, 1)), np.zeros((1, 0), dtype=int)
    if len(child_flows) == 1:
        sums, combined = child_flows[0], envelopes[0]
        pairs = np.arange(sums.shape[0])[:, None]
    else:
        first = np.repeat(np.arange(child_flows[0].shape[0]), child_flows[1].shape[0])
        second = np.tile(np.arange(child_flows[1].shape[0]), child_flows[0].shape[0])
        sums = child_flows[0][first] + child_flows[1][second]
        combined = envelopes[0][:, first] + envelopes[1][:, second]
        pairs = np.column_stack([first, second])
    order = np.argsort(sums, kind="stable")
    return sums[order], combined[:, order], pairs[order]


def _window_max(values: FloatArray, start: NDArray[np.int_], stop: NDArray[np.int_]) -> FloatArray:
    """Row-wise ``max(values[row, start:stop])`` for many windows via a sparse table."""
    count, width = values.shape
    result = np.full(start.shape, -np.inf)
    length = stop - start
    valid = length > 0
    if not valid.any():
        return result
    level = np.zeros(start.shape, dtype=int)
    level[valid] = np.floor(np.log2(length[valid])).astype(int)
    rows = np.broadcast_to(np.arange(count)[:, None], start.shape)

    table, span, depth = values, 1, 0
    while True:
        selected = valid & (level == depth)
        if selected.any():
            row = rows[selected]
            result[selected] = np.maximum(table[row, start[selected]], table[row, stop[selected] - span])
        if 2 * span > width:
            break
        table = np.maximum(table[:, :-span], table[:, span:])
        span *= 2
        depth += 1
    return result


def _solve_node(
    bnet: BinaryTreeNetwork, grids: DiscretizationGrid, tables: List[Optional[_NodeTable]], index: int, eps: float
) -> Tuple[_NodeTable, int]:
    node = bnet.nodes[index]
    lambdas = grids.lambdas
    count = lambdas.shape[0]
    flows, curtails = grids.flows[index], grids.curtails[index]
    work = 0

    envelopes, arguments, child_flows = [], [], []
    for child in node.children:
        envelope, argument = _edge_envelope(bnet.nodes[child], lambdas, grids.flows[child], tables[child].value, eps)
        envelopes.append(envelope)
        arguments.append(argument)
        child_flows.append(grids.flows[child])
        work += count * count * grids.flows[child].shape[0]

    sums, combined, pairs = _pair_sums(count, child_flows, envelopes)
    work += count * sums.shape[0]

    window_lo, window_hi = _injection_window(node, lambdas, eps)
    base = flows[:, None] - curtails[None, :] + node.generation - node.demand
    lower = base[None, :, :] + window_lo[:, None, None]
    upper = base[None, :, :] + window_hi[:, None, None]
    start = np.searchsorted(sums, lower - _WINDOW_SLACK, side="left")
    stop = np.searchsorted(sums, upper + _WINDOW_SLACK, side="right")
    best = _window_max(combined, start.reshape(count, -1), stop.reshape(count, -1)).reshape(lower.shape)
    work += lower.size

    table = best + lambdas[:, None, None] * (node.share - curtails)[None, None, :]
    node_table = _NodeTable(
        value=table.max(axis=2),
        alpha_arg=table.argmax(axis=2),
        sums=sums,
        combined=combined,
        pairs=pairs,
        child_lambda_args=tuple(arguments),
        window_lo=window_lo,
        window_hi=window_hi,
    )
    return node_table, work


def _backtrack(
    bnet: BinaryTreeNetwork, grids: DiscretizationGrid, tables: Sequence[_NodeTable], root_lambda: int
) -> Tuple[NodeState, ...]:
    choice: Dict[int, Tuple[int, int]] = {0: (root_lambda, 0)}
    states: List[NodeState] = []
    for node in bnet.nodes:
        lam, flow = choice[node.index]
        table = tables[node.index]
        alpha = int(table.alpha_arg[lam, flow])
        flows, curtails = grids.flows[node.index], grids.curtails[node.index]
        states.append(NodeState(float(grids.lambdas[lam]), float(flows[flow]), float(curtails[alpha])))
        if not node.children:
            continue
        base = flows[flow] - curtails[alpha] + node.generation - node.demand
        start = int(np.searchsorted(table.sums, base + table.window_lo[lam] - _WINDOW_SLACK, side="left"))
        stop = int(np.searchsorted(table.sums, base + table.window_hi[lam] + _WINDOW_SLACK, side="right"))
        pick = start + int(np.argmax(table.combined[lam, start:stop]))
        for slot, child in enumerate(node.children):
            child_flow = int(table.pairs[pick, slot])
            choice[child] = (int(table.child_lambda_args[slot][lam, child_flow]), child_flow)
    return tuple(states)


def _baseline(net: Network, lambda_bounds: Tuple[float, float]) -> float:
    if not net.aggregator_buses:
        return 0.0
    outcome = favorable_outcome(net, None, lambda_bounds=lambda_bounds)
    return float(outcome.lmps @ net.aggregator_share)


def dp_solve(
    tree: Union[BinaryTreeNetwork, Network],
    eps: float,
    lambda_bounds: Optional[Tuple[float, float]] = None,
    grid_budget: int = DEFAULT_GRID_BUDGET,
) -> DpSolution:
    """Runs the bottom-up dynamic program for an ``eps``-accurate curtailment.

    Args:
        tree (Union[BinaryTreeNetwork, Network]): A reduced tree, or a radial network to reduce.
        eps (float): Accuracy target for both the objective and every constraint.
        lambda_bounds (Optional[Tuple[float, float]]): LMP box; defaults to the network's prior bounds.
        grid_budget (int): Maximum number of grid states per node.

    Returns:
        DpSolution: Chosen states, objective, favorable baseline and residual summary.

    Raises:
        NotRadialError: If a meshed network is given.
        GridBudgetError: If ``eps`` is too small for the budget.
        DpInfeasibleError: If no grid assignment meets the relaxed constraints.
    """
    bnet = to_binary_tree(tree) if isinstance(tree, Network) else tree
    bounds = tuple(lambda_bounds) if lambda_bounds is not None else default_lambda_bounds(bnet.network)
    alignment = _alignment(bnet, bounds)
    delta = delta_from_eps(bnet, eps, bounds, aligned=alignment is not None)
    price_delta = price_delta_from_eps(bnet, eps, bounds, aligned=alignment is not None)
    mw_quantum, price_quantum = alignment if alignment is not None else (None, None)
    grids = build_grids(bnet, delta, bounds, mw_quantum, price_quantum, grid_budget, price_delta=price_delta)
    logger.info(
        "DP on %d nodes: eps=%.6g delta=%.6g price delta=%.6g aligned=%s max states/node=%d",
        bnet.size,
        eps,
        delta,
        price_delta,
        alignment is not None,
        max(grids.sizes),
    )

    tables: List[Optional[_NodeTable]] = [None] * bnet.size
    work = 0
    for index in reversed(range(bnet.size)):
        tables[index], node_work = _solve_node(bnet, grids, tables, index, eps)
        work += node_work
        logger.debug("DP node %d done (%d updates)", index, node_work)

    root_values = tables[0].value[:, 0]
    if not np.isfinite(root_values).any():
        raise DpInfeasibleError(f"no grid assignment satisfies the relaxed clearing conditions at eps={eps}")
    states = _backtrack(bnet, grids, tables, int(np.argmax(root_values)))

    objective = float(sum(state.lmp * (node.share - state.curtail) for node, state in zip(bnet.nodes, states)))
    residuals = violation_report(bnet, states, bounds)
    max_violation = max(0.0, max(residual.value for residual in residuals))

    low, high = bounds
    on_bound = any(
        node.share > 0 and (state.lmp <= low + _BOUND_TOL or state.lmp >= high - _BOUND_TOL)
        for node, state in zip(bnet.nodes, states)
    )
    if on_bound:
        logger.warning("DP optimum has an aggregator LMP on the prior bound [%.6g, %.6g]", low, high)

    solution = DpSolution(
        states=states,
        objective=objective,
        baseline=_baseline(bnet.network, bounds),
        epsilon=eps,
        delta=delta,
        price_delta=price_delta,
        max_violation=max_violation,
        work=work,
        lambda_bounds=bounds,
        lambda_on_bound=on_bound,
        tree=bnet,
    )
    logger.info("DP objective %.6g, profit %.6g, max violation %.3g", objective, solution.profit, max_violation)
    return solution


# --- Verification ---


def violation_report(
    bnet: BinaryTreeNetwork,
    states: Union[DpSolution, Sequence[NodeState]],
    lambda_bounds: Optional[Tuple[float, float]] = None,
) -> List[Residual]:
    """Evaluates every unrelaxed clearing condition at tree states.

    Args:
        bnet (BinaryTreeNetwork): The tree.
        states (Union[DpSolution, Sequence[NodeState]]): A DP solution or one state per node.
        lambda_bounds (Optional[Tuple[float, float]]): LMP box to check; a DP solution supplies its own.

    Returns:
        List[Residual]: One residual per constraint, positive when violated.
    """
    if isinstance(states, DpSolution):
        lambda_bounds = lambda_bounds if lambda_bounds is not None else states.lambda_bounds
        states = states.states

    residuals: List[Residual] = []
    for node in bnet.nodes:
        state = states[node.index]
        incoming = sum(states[child].flow for child in node.children)
        injection = incoming - state.flow - node.generation + state.curtail + node.demand

        def add(name: str, value: float) -> None:
            residuals.append(Residual(name, node.index, float(value)))

        add("redispatch_lo", node.redispatch_lo - injection)
        add("redispatch_hi", injection - node.redispatch_hi)
        if not node.is_dummy:
            margin = state.lmp - node.cost
            add("price_lo", -margin * (injection - node.redispatch_lo))
            add("price_hi", -margin * (injection - node.redispatch_hi))
        if node.parent is None:
            add("root_flow", abs(state.flow))
        else:
            spread = states[node.parent].lmp - state.lmp
            add("flow_lo", node.flow_lo - state.flow)
            add("flow_hi", state.flow - node.flow_hi)
            add("edge_lo", -spread * (node.flow_lo - state.flow))
            add("edge_hi", -spread * (node.flow_hi - state.flow))
        add("curtail_lo", -state.curtail)
        add("curtail_hi", state.curtail - node.share)
        if lambda_bounds is not None:
            add("lmp_lo", lambda_bounds[0] - state.lmp)
            add("lmp_hi", state.lmp - lambda_bounds[1])
    return residuals


def tree_state_from_outcome(bnet: BinaryTreeNetwork, outcome: MarketOutcome) -> Tuple[NodeState, ...]:
    """Maps an exact clearing outcome into tree coordinates.

    Dummy nodes take the LMP of their parent and carry the sum of their children's flows.
    """
    net = bnet.network
    lmps = np.zeros(bnet.size)
    curtails = np.zeros(bnet.size)
    flows = np.zeros(bnet.size)
    for node in bnet.nodes:
        if node.is_dummy:
            lmps[node.index] = lmps[node.parent]
        else:
            position = net.bus_position(node.bus)
            lmps[node.index] = outcome.lmps[position]
            curtails[node.index] = outcome.alpha[position]
    for node in reversed(bnet.nodes):
        if node.is_dummy:
            flows[node.index] = sum(flows[child] for child in node.children)
        elif node.parent is not None:
            flows[node.index] = node.orientation * outcome.flows[net.line_position(node.line)]
    return tuple(NodeState(float(lmp), float(flow), float(curtail)) for lmp, flow, curtail in zip(lmps, flows, curtails))
