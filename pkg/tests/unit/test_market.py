"""Unit tests for market clearing, favorable dual selection and the KKT check."""

from dataclasses import replace

import numpy as np
import pytest

from src.lmpcurtail.cases import random_radial_network
from src.lmpcurtail.exceptions import ClearingInfeasibleError, InvalidCurtailmentError
from src.lmpcurtail.market import (
    MarketOutcome,
    build_clearing_lp,
    check_kkt,
    clear_market,
    dual_clearing_objective,
    favorable_outcome,
    select_favorable_duals,
)
from src.lmpcurtail.model import Network
from src.lmpcurtail.singlebus import feasibility_limit


class TestClearMarket:
    """Unit tests for clear_market on the bundled cases."""

    def test_two_bus_without_curtailment(self, two_bus: Network):
        """Test flows, LMPs and objective of the congested two-bus case.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        outcome = clear_market(two_bus)

        assert outcome.flows.tolist() == pytest.approx([10.0]), f"Unexpected flows {outcome.flows}"
        assert outcome.lmps.tolist() == pytest.approx([10.0, 20.0]), f"Unexpected LMPs {outcome.lmps}"
        assert outcome.redispatch.tolist() == pytest.approx([0.0, 0.0]), "No redispatch expected at zero curtailment."
        assert outcome.objective_value == pytest.approx(-100.0), "Unexpected clearing objective."
        assert outcome.duals_flow_hi.tolist() == pytest.approx([10.0]), "Line dual should equal the price spread."

    def test_two_bus_past_first_jump(self, two_bus: Network):
        """Test that curtailing beyond bus 1's upward redispatch decongests the line.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        outcome = clear_market(two_bus, [0.15, 0.0])

        assert outcome.lmps.tolist() == pytest.approx([20.0, 20.0]), f"Unexpected LMPs {outcome.lmps}"
        assert outcome.flows[0] == pytest.approx(9.95), f"Unexpected flow {outcome.flows[0]}"
        assert outcome.redispatch.tolist() == pytest.approx([0.1, 0.05]), f"Unexpected redispatch {outcome.redispatch}"

    def test_six_bus_without_curtailment(self, six_bus: Network):
        """Test the flows and LMPs of the six-bus case at zero curtailment.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        outcome = clear_market(six_bus)

        assert np.allclose(outcome.flows, [100.0, -38.0, 50.0, -8.1, -100.1]), f"Unexpected flows {outcome.flows}"
        assert np.allclose(outcome.lmps, [20.0, 25.0, 25.0, 35.0, 25.0, 25.0]), f"Unexpected LMPs {outcome.lmps}"

    def test_infeasible_curtailment(self, two_bus: Network):
        """Test that curtailment beyond the total upward flexibility is infeasible.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        with pytest.raises(ClearingInfeasibleError, match="redispatch flexibility"):
            clear_market(two_bus, [0.5, 0.0])

    def test_invalid_curtailment(self, two_bus: Network):
        """Test that curtailment above the aggregator share is rejected before solving.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        with pytest.raises(InvalidCurtailmentError):
            clear_market(two_bus, [11.0, 0.0])

    def test_ring_respects_flow_space(self, ring3: Network):
        """Test that flows on a meshed network satisfy the cycle rows.

        Args:
            ring3 (Network): Bundled three-bus ring.
        """
        lp = build_clearing_lp(ring3)
        outcome = clear_market(ring3)
        cycle_rows = lp.matrix[ring3.n :]
        assert cycle_rows.shape[0] == 1, "The ring should contribute one cycle row."
        assert np.allclose(cycle_rows @ outcome.flows, 0.0), "Flows violate Kirchhoff's voltage law."


class TestKkt:
    """Unit tests for check_kkt and the dual clearing objective."""

    @pytest.mark.parametrize("alpha", [[0.0, 0.0], [0.05, 0.0], [0.15, 0.0], [0.2, 0.0]])
    def test_solver_outcomes_pass(self, two_bus: Network, alpha):
        """Test that every solver outcome satisfies the KKT conditions.

        Args:
            two_bus (Network): Bundled two-bus case.
            alpha: Curtailment vector.
        """
        outcome = clear_market(two_bus, alpha)
        report = check_kkt(two_bus, alpha, outcome)
        assert report.passed, f"KKT check failed: {report.to_dict()}"

    def test_dual_objective_matches_primal(self, six_bus: Network):
        """Test strong duality of the clearing program.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        alpha = six_bus.curtailment({1: 2.0})
        outcome = clear_market(six_bus, alpha)
        assert dual_clearing_objective(six_bus, alpha, outcome) == pytest.approx(outcome.objective_value, abs=1e-6)

    def test_tampered_lmps_fail(self, two_bus: Network):
        """Test that an outcome with modified LMPs fails stationarity.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        outcome = clear_market(two_bus)
        tampered = replace(outcome, lmps=outcome.lmps + np.array([0.0, 1.0]))
        report = check_kkt(two_bus, None, tampered)
        assert not report.passed, "Tampered LMPs passed the KKT check."
        assert report.stationarity == pytest.approx(1.0), f"Unexpected stationarity residual {report.stationarity}"

    def test_round_trip_keeps_kkt(self, six_bus: Network):
        """Test that a serialized outcome still passes the check after reloading.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        outcome = clear_market(six_bus, six_bus.curtailment({1: 1.0}))
        restored = MarketOutcome.from_dict(outcome.to_dict())
        assert check_kkt(six_bus, None, restored).passed, "Reloaded outcome failed the KKT check."
        assert np.array_equal(restored.lmps, outcome.lmps), "LMPs changed in serialization."


class TestFavorableDuals:
    """Unit tests for the aggregator-favorable dual selection."""

    def test_jump_point_picks_upper_lmp(self, two_bus: Network):
        """Test that at a jump the favorable LMP is the upper end of the dual face.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        outcome = favorable_outcome(two_bus, [0.1, 0.0])
        assert outcome.lmps[0] == pytest.approx(20.0), f"Expected the favorable LMP 20, got {outcome.lmps[0]}"
        assert check_kkt(two_bus, None, outcome).passed, "Favorable duals must remain KKT multipliers."

    def test_unique_duals_are_kept(self, two_bus: Network):
        """Test that a unique dual solution is returned unchanged.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        outcome = clear_market(two_bus)
        selected = select_favorable_duals(two_bus, None, outcome)
        assert selected is outcome, "A unique dual optimum should not be replaced."

    def test_caps_limit_the_selection(self, two_bus: Network):
        """Test that the LMP caps bound the selected price.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        outcome = favorable_outcome(two_bus, [0.1, 0.0], lambda_bounds=(10.0, 15.0))
        assert outcome.lmps[0] == pytest.approx(15.0), f"Expected the capped LMP 15, got {outcome.lmps[0]}"

    def test_no_targets_returns_outcome(self, two_bus: Network):
        """Test that a fully curtailed target leaves nothing to favor.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        outcome = clear_market(two_bus)
        assert select_favorable_duals(two_bus, None, outcome, target_buses=[2]) is outcome, "Bus 2 has no share."


class TestTreeLmps:
    """LMP structure of cleared radial networks, for solver and favorable multipliers alike."""

    TOL = 1e-6

    @staticmethod
    def _outcomes(seed: int):
        net = random_radial_network(seed, n=4 + seed % 5)
        bus = net.aggregator_buses[0]
        alpha = net.curtailment({bus: 0.5 * feasibility_limit(net, bus)})
        return net, [clear_market(net), clear_market(net, alpha), favorable_outcome(net, alpha)]

    @pytest.mark.parametrize("seed", range(50))
    def test_uncongested_lines_equalize_lmps(self, seed: int):
        """Test that both ends of a line whose flow is strictly inside its limits have the same LMP.

        Args:
            seed (int): Generator seed.
        """
        net, outcomes = self._outcomes(seed)
        for outcome in outcomes:
            for position, line in enumerate(net.lines):
                flow = outcome.flows[position]
                if line.flow_lo + self.TOL < flow < line.flow_hi - self.TOL:
                    sending = outcome.lmps[net.bus_position(line.from_bus)]
                    receiving = outcome.lmps[net.bus_position(line.to_bus)]
                    assert sending == pytest.approx(receiving, abs=self.TOL), (
                        f"Seed {seed}: line {line.id} is uncongested but LMPs are {sending} and {receiving}"
                    )

    @pytest.mark.parametrize("seed", range(50))
    def test_congested_lines_raise_receiving_lmp(self, seed: int):
        """Test that the sending end of a line at its limit never has the higher LMP.

        Args:
            seed (int): Generator seed.
        """
        net, outcomes = self._outcomes(seed)
        for outcome in outcomes:
            for position, line in enumerate(net.lines):
                flow = outcome.flows[position]
                start = outcome.lmps[net.bus_position(line.from_bus)]
                end = outcome.lmps[net.bus_position(line.to_bus)]
                if flow >= line.flow_hi - self.TOL and flow > 0:
                    assert start <= end + self.TOL, f"Seed {seed}: line {line.id} sends {flow} from {start} to {end}"
                if flow <= line.flow_lo + self.TOL and flow < 0:
                    assert end <= start + self.TOL, f"Seed {seed}: line {line.id} sends {-flow} from {end} to {start}"
