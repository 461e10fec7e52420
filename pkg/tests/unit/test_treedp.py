"""Unit tests for the binary tree reduction and the epsilon-accurate dynamic program."""

from dataclasses import replace

import numpy as np
import pytest

from src.lmpcurtail.cases import line_network
from src.lmpcurtail.exceptions import ConfigError, GridBudgetError, NotRadialError
from src.lmpcurtail.market import favorable_outcome
from src.lmpcurtail.model import Bus, Line, Network
from src.lmpcurtail.treedp import (
    BinaryTreeNetwork,
    NodeState,
    build_grids,
    delta_from_eps,
    dp_solve,
    grid_axis,
    price_delta_from_eps,
    to_binary_tree,
    tree_state_from_outcome,
    violation_report,
)


def _small_two_bus() -> Network:
    """Two buses with a congested 1 MW line and 1 MW of aggregator generation at bus 1."""
    buses = (
        Bus(id=1, cost=10.0, generation=1.0, demand=0.0, redispatch_lo=-0.2, redispatch_hi=0.1, aggregator_share=1.0),
        Bus(id=2, cost=20.0, generation=0.0, demand=1.0, redispatch_lo=-0.2, redispatch_hi=0.1),
    )
    lines = (Line(id=1, from_bus=1, to_bus=2, reactance=0.1, flow_lo=-1.0, flow_hi=1.0),)
    return Network(buses=buses, lines=lines, slack_bus=2, name="small-two-bus")


def _leaf(bus_id: int, share: float = 0.0) -> Bus:
    return Bus(
        id=bus_id,
        cost=10.0,
        generation=10.0,
        demand=0.0,
        redispatch_lo=-2.0,
        redispatch_hi=0.1,
        aggregator_share=share,
    )


def _star() -> Network:
    """Slack bus 1 fed by four congested 10 MW leaves; bus 2 holds the aggregator."""
    center = Bus(id=1, cost=20.0, generation=0.0, demand=40.0, redispatch_lo=-2.0, redispatch_hi=0.1)
    buses = (center, _leaf(2, share=10.0), _leaf(3), _leaf(4), _leaf(5))
    lines = tuple(
        Line(id=leaf - 1, from_bus=leaf, to_bus=1, reactance=0.1, flow_lo=-10.0, flow_hi=10.0) for leaf in (2, 3, 4, 5)
    )
    return Network(buses=buses, lines=lines, slack_bus=1, name="star")


def _binary_star() -> Network:
    """The star with two empty hub buses, so every bus has at most two children."""
    star = _star()
    hubs = tuple(
        Bus(id=bus_id, cost=20.0, generation=0.0, demand=0.0, redispatch_lo=0.0, redispatch_hi=0.0)
        for bus_id in (6, 7)
    )
    hub_of = {2: 6, 3: 6, 4: 7, 5: 7}
    lines = tuple(replace(line, to_bus=hub_of[line.from_bus]) for line in star.lines) + (
        Line(id=5, from_bus=6, to_bus=1, reactance=0.1, flow_lo=-100.0, flow_hi=100.0),
        Line(id=6, from_bus=7, to_bus=1, reactance=0.1, flow_lo=-100.0, flow_hi=100.0),
    )
    return replace(star, buses=star.buses + hubs, lines=lines, name="binary-star")


class TestToBinaryTree:
    """Unit tests for to_binary_tree."""

    def test_two_bus_tree(self, two_bus: Network):
        """Test that the slack bus becomes the root and the line is re-oriented.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        bnet = to_binary_tree(two_bus)

        assert bnet.size == 2, f"Expected two nodes, got {bnet.size}"
        assert bnet.nodes[0].bus == 2, "The slack bus should be the root."
        child = bnet.node_for_bus(1)
        assert child.parent == 0, "Bus 1 should hang below the root."
        assert child.orientation == -1, "The line runs from the child to the root."
        assert (child.flow_lo, child.flow_hi) == (-10.0, 10.0), "Unexpected flow limits."
        assert bnet.dummy_limit == pytest.approx(24.0), f"Unexpected dummy limit {bnet.dummy_limit}"
        assert bnet.flow_boxes[child.index] == pytest.approx((-10.0, 2.0)), "Unexpected flow box."

    def test_six_bus_gets_dummies(self, six_bus: Network):
        """Test that the three children of bus 2 are split over two dummy nodes.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        bnet = to_binary_tree(six_bus)

        assert bnet.size == 8, f"Expected 6 buses and 2 dummies, got {bnet.size} nodes"
        assert bnet.n_dummies == 2, f"Expected 2 dummy nodes, got {bnet.n_dummies}"
        assert all(len(node.children) <= 2 for node in bnet.nodes), "A node has more than two children."
        assert all(node.parent is None or node.parent < node.index for node in bnet.nodes), "Order is not top-down."
        assert sorted(bnet.bus_to_node) == list(six_bus.bus_ids), "Every bus must map to exactly one node."
        for node in bnet.nodes:
            if node.is_dummy:
                assert node.parent == bnet.bus_to_node[2], "Dummy nodes should hang below bus 2."
                assert (node.flow_lo, node.flow_hi) == (-bnet.dummy_limit, bnet.dummy_limit), "Unexpected dummy limits."

    def test_curtailment_mapping(self, six_bus: Network):
        """Test the bus <-> node mapping of curtailment vectors.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        bnet = to_binary_tree(six_bus)
        alpha = six_bus.curtailment({1: 2.5})
        values = bnet.curtailment_to_nodes(alpha)

        assert values[bnet.bus_to_node[1]] == 2.5, "Curtailment did not reach the bus node."
        assert np.array_equal(bnet.curtailment_from_nodes(values), alpha), "Mapping back changed the vector."

    def test_ring_is_rejected(self, ring3: Network):
        """Test that a meshed network cannot be reduced.

        Args:
            ring3 (Network): Bundled three-bus ring.
        """
        with pytest.raises(NotRadialError, match="not radial"):
            to_binary_tree(ring3)


class TestDiscretization:
    """Unit tests for grid_axis, delta_from_eps and build_grids."""

    def test_grid_axis_includes_both_ends(self):
        """Test that a grid covers both endpoints with spacing at most the step."""
        axis = grid_axis(0.0, 1.0, 0.3)
        assert (axis[0], axis[-1]) == (0.0, 1.0), f"Endpoints missing from {axis}"
        assert np.max(np.diff(axis)) <= 0.3, f"Spacing exceeds the step: {axis}"
        assert grid_axis(2.0, 2.0, 0.1).tolist() == [2.0], "A degenerate range is a single point."

    def test_aligned_delta(self, two_bus: Network):
        """Test that lattice-aligned data get a quarter of epsilon as spacing.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        bnet = to_binary_tree(two_bus)
        assert delta_from_eps(bnet, 0.5) == pytest.approx(0.125), "Aligned spacing should be eps / 4."
        assert delta_from_eps(bnet, 0.5, aligned=False) < 0.125, "Unaligned spacing must be finer."

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_nonpositive_eps(self, two_bus: Network, eps: float):
        """Test that epsilon must be positive.

        Args:
            two_bus (Network): Bundled two-bus case.
            eps (float): Invalid accuracy.
        """
        with pytest.raises(ConfigError, match="eps must be positive"):
            delta_from_eps(to_binary_tree(two_bus), eps)

    def test_grid_sizes(self, two_bus: Network):
        """Test the per-node state counts of the two-bus grid.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        bnet = to_binary_tree(two_bus)
        grids = build_grids(bnet, 0.125, (10.0, 20.0), mw_quantum=0.1, price_quantum=1.0)

        assert grids.lambdas.shape[0] == 81, f"Expected 81 LMP points, got {grids.lambdas.shape[0]}"
        child = bnet.bus_to_node[1]
        assert grids.flows[child].shape[0] == 121, "Flow axis should step 0.1 MW over [-10, 2]."
        assert grids.curtails[child].shape[0] == 101, "Curtailment axis should step 0.1 MW over [0, 10]."
        assert grids.sizes == (81, 81 * 121 * 101), f"Unexpected grid sizes {grids.sizes}"
        assert grids.covers(child, NodeState(20.0, -10.0, 0.1)), "The exact optimum should be on the grid."

    def test_grid_budget(self, two_bus: Network):
        """Test that an oversized grid is refused before any table is built.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        with pytest.raises(GridBudgetError, match="budget is 1000"):
            build_grids(to_binary_tree(two_bus), 0.125, (10.0, 20.0), budget=1000)

    def test_unaligned_delta_per_constraint_family(self, two_bus: Network):
        """Test the spacing on unaligned data: two rounded terms at bus 1 times its 10 $/MWh cost margin.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        bnet = to_binary_tree(two_bus)
        delta = delta_from_eps(bnet, 0.4, (10.0, 20.0), aligned=False)
        assert delta == pytest.approx(0.4 / 20.0), f"Unexpected spacing {delta}"
        assert delta <= 0.1, "The spacing may never exceed a quarter of eps."

    def test_wider_boxes_do_not_coarsen_delta(self, two_bus: Network):
        """Test that widening the LMP box never increases the spacing.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        bnet = to_binary_tree(two_bus)
        narrow = delta_from_eps(bnet, 0.4, (10.0, 20.0), aligned=False)
        wide = delta_from_eps(bnet, 0.4, (5.0, 25.0), aligned=False)
        assert wide <= narrow, f"Wider box gave the coarser spacing {wide} > {narrow}"

    def test_price_delta(self, two_bus: Network):
        """Test that the LMP spacing spends half of eps on the 10 MW of aggregator revenue.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        bnet = to_binary_tree(two_bus)
        unaligned = price_delta_from_eps(bnet, 0.4, (10.0, 20.0), aligned=False)
        assert unaligned == pytest.approx(0.02), f"Unexpected spacing {unaligned}"
        assert price_delta_from_eps(bnet, 0.4) == pytest.approx(0.1), "Aligned LMP spacing should be eps / 4."
        with pytest.raises(ConfigError, match="eps must be positive"):
            price_delta_from_eps(bnet, 0.0)

    def test_price_axis_uses_its_own_spacing(self, two_bus: Network):
        """Test that build_grids steps the LMP axis by the price spacing and covers with it.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        bnet = to_binary_tree(two_bus)
        grids = build_grids(bnet, 0.125, (10.0, 20.0), mw_quantum=0.1, price_quantum=1.0, price_delta=0.5)
        child = bnet.bus_to_node[1]

        assert grids.lambdas.shape[0] == 21, f"Expected 21 LMP points, got {grids.lambdas.shape[0]}"
        assert grids.covers(child, NodeState(14.3, -10.0, 0.1)), "An LMP within half a step should be covered."
        assert not grids.covers(child, NodeState(14.3, 2.5, 0.1)), "A flow beyond the box is not covered."
        assert not grids.covers(child, NodeState(21.0, -10.0, 0.1)), "An LMP beyond the box is not covered."


class TestDpSolve:
    """Unit tests for dp_solve and the residual report."""

    def test_two_bus_solution(self, two_bus: Network):
        """Test that the DP recovers the exact two-bus optimum on the aligned grid.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        solution = dp_solve(two_bus, 0.5)

        assert solution.delta == pytest.approx(0.125), f"Unexpected spacing {solution.delta}"
        assert solution.baseline == pytest.approx(100.0), f"Unexpected baseline {solution.baseline}"
        assert solution.profit == pytest.approx(98.0, abs=0.5), f"Unexpected profit {solution.profit}"
        assert solution.curtailment[0] == pytest.approx(0.1, abs=0.125), "Bus 1 should curtail about 0.1 MW."
        assert solution.max_violation <= 0.5, f"Violation {solution.max_violation} exceeds eps"
        assert solution.work > 0, "The DP should report its work."

    def test_solution_dict(self, two_bus: Network):
        """Test the serialized form of a DP solution.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        record = dp_solve(two_bus, 0.5).to_dict()
        assert {"objective", "baseline", "profit", "delta", "curtailment", "nodes"} <= set(record), "Keys missing."
        assert set(record["curtailment"]) == {"1", "2"}, "Curtailment should be keyed by bus id."
        assert record["dummy_nodes"] == [], "The two-bus tree has no dummy nodes."

    def test_budget_is_enforced(self, two_bus: Network):
        """Test that a tiny grid budget aborts the DP.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        with pytest.raises(GridBudgetError):
            dp_solve(two_bus, 0.5, grid_budget=100)

    @pytest.mark.parametrize("alpha", [[0.0, 0.0], [0.1, 0.0], [0.15, 0.0]])
    def test_exact_outcomes_have_no_violation(self, two_bus: Network, alpha):
        """Test that an exact clearing outcome satisfies every tree constraint.

        Args:
            two_bus (Network): Bundled two-bus case.
            alpha: Curtailment vector.
        """
        bnet = to_binary_tree(two_bus)
        states = tree_state_from_outcome(bnet, favorable_outcome(two_bus, alpha))
        residuals = violation_report(bnet, states, (10.0, 20.0))
        worst = max(residuals, key=lambda residual: residual.value)
        assert worst.value <= 1e-6, f"Exact outcome violates {worst.constraint} at node {worst.node}"

    def test_dummy_state_sums_children(self, six_bus: Network):
        """Test that dummy nodes carry the flows of their children and their parent's LMP.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        bnet = to_binary_tree(six_bus)
        states = tree_state_from_outcome(bnet, favorable_outcome(six_bus, None))
        for node in bnet.nodes:
            if node.is_dummy:
                expected = sum(states[child].flow for child in node.children)
                assert states[node.index].flow == pytest.approx(expected), "Dummy flow is not the child sum."
                assert states[node.index].lmp == states[node.parent].lmp, "Dummy LMP should copy the parent."
        residuals = violation_report(bnet, states, (20.0, 35.0))
        assert max(residual.value for residual in residuals) <= 1e-6, "Exact six-bus outcome violates the tree rows."

    def test_line_network_solves(self):
        """Test the DP on a short feeder with aligned data."""
        bnet = to_binary_tree(line_network(4))
        assert isinstance(bnet, BinaryTreeNetwork), "Feeder should reduce to a tree."
        solution = dp_solve(bnet, 0.2)
        assert solution.max_violation <= 0.2, f"Violation {solution.max_violation} exceeds eps"
        assert solution.profit >= -0.2, f"Profit {solution.profit} is below the epsilon tolerance"

    def test_halving_eps_keeps_the_objective(self):
        """Test that refining eps never loses more than eps of objective on a congested two-bus case."""
        net = _small_two_bus()
        objectives = {eps: dp_solve(net, eps).objective for eps in (0.4, 0.2, 0.1)}

        assert objectives[0.4] == pytest.approx(18.0), f"Unexpected coarse objective {objectives}"
        for coarse, fine in ((0.4, 0.2), (0.2, 0.1)):
            assert objectives[fine] >= objectives[coarse] - coarse, f"Refining {coarse} -> {fine} lost {objectives}"

    def test_star_reduction_matches_binary_encoding(self):
        """Test that the dummy split of a four-leaf star solves like the same star built with two empty hub buses."""
        star, binary = _star(), _binary_star()
        eps = 0.5
        reduced = dp_solve(star, eps)
        encoded = dp_solve(binary, eps)

        assert reduced.tree.n_dummies == 2, f"Expected two dummies, got {reduced.tree.n_dummies}"
        assert encoded.tree.n_dummies == 0, "The hub encoding is already binary."
        assert reduced.objective == pytest.approx(encoded.objective, abs=eps), (
            f"Reduced {reduced.objective} and encoded {encoded.objective} differ by more than eps"
        )
        assert reduced.profit == pytest.approx(98.0, abs=eps), f"Unexpected star profit {reduced.profit}"
        assert reduced.curtailment[reduced.tree.network.bus_position(2)] == pytest.approx(0.1, abs=0.125), (
            "Bus 2 should curtail about 0.1 MW."
        )
