"""Unit tests for LMP staircase tracing and the exact single-bus optimum."""

import pytest

from src.lmpcurtail.exceptions import InvalidCurtailmentError
from src.lmpcurtail.model import Network
from src.lmpcurtail.singlebus import (
    Segment,
    StaircaseProfile,
    constraint_count,
    feasibility_limit,
    next_jump,
    optimize_single_bus,
    trace_staircase,
)


class TestJumps:
    """Unit tests for feasibility_limit and next_jump."""

    def test_two_bus_feasibility_limit(self, two_bus: Network):
        """Test that the upward flexibility of both buses bounds the curtailment.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        assert feasibility_limit(two_bus, 1) == pytest.approx(0.2), "Two 0.1 MW upward margins allow 0.2 MW."

    def test_two_bus_jumps(self, two_bus: Network):
        """Test the jump sequence of the two-bus staircase.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        first = next_jump(two_bus, 1, 0.0)
        assert first == pytest.approx(0.1), f"Expected the first jump at 0.1, got {first}"
        second = next_jump(two_bus, 1, first)
        assert second == pytest.approx(0.2), f"Expected the second jump at 0.2, got {second}"
        assert next_jump(two_bus, 1, second) is None, "No jump should follow the end of the staircase."

    def test_constraint_count(self, two_bus: Network, ring3: Network):
        """Test the count 2n + 2t + rank(H).

        Args:
            two_bus (Network): Bundled two-bus case.
            ring3 (Network): Bundled three-bus ring.
        """
        assert constraint_count(two_bus) == 6, "Two buses and one line give 6 rows."
        assert constraint_count(ring3) == 13, "Three buses, three lines and one cycle give 13 rows."


class TestTraceStaircase:
    """Unit tests for trace_staircase."""

    def test_two_bus_profile(self, two_bus: Network):
        """Test the segments of the two-bus staircase.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        profile = trace_staircase(two_bus, 1)

        assert [round(s.alpha_lo, 9) for s in profile.segments] == [0.0, 0.1], "Unexpected segment starts."
        assert [round(s.alpha_hi, 9) for s in profile.segments] == [0.1, 0.2], "Unexpected segment ends."
        assert [s.lmp for s in profile.segments] == pytest.approx([10.0, 20.0]), "Unexpected segment LMPs."
        assert profile.end == pytest.approx(0.2), "The staircase ends at the feasibility limit."
        assert profile.violations() == [], f"Profile is malformed: {profile.violations()}"

    def test_six_bus_profile(self, six_bus: Network):
        """Test the five steps of the six-bus staircase at bus 1.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        profile = trace_staircase(six_bus, 1)

        assert list(profile.jump_points) == pytest.approx([0.15, 1.25, 3.35, 5.45, 5.5]), "Unexpected jumps."
        assert [s.lmp for s in profile.segments] == pytest.approx([20.0, 25.0, 28.0, 30.0, 35.0]), "Unexpected LMPs."
        assert profile.feasibility_limit == pytest.approx(5.5), "Unexpected feasibility limit."
        assert profile.violations() == [], f"Profile is malformed: {profile.violations()}"

    def test_alpha_max_truncates(self, six_bus: Network):
        """Test that tracing stops at alpha_max.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        profile = trace_staircase(six_bus, 1, alpha_max=2.0)
        assert profile.end == pytest.approx(2.0), "The trace should end at alpha_max."
        assert [s.lmp for s in profile.segments] == pytest.approx([20.0, 25.0, 28.0]), "Unexpected truncated LMPs."

    def test_lmp_at_is_right_continuous(self, two_bus: Network):
        """Test lookups inside a segment, at a jump and beyond the range.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        profile = trace_staircase(two_bus, 1)
        assert profile.lmp_at(0.05) == pytest.approx(10.0), "Inside the first segment."
        jump = profile.jump_points[0]
        assert profile.lmp_at(jump) == pytest.approx(20.0), "A jump point belongs to the next segment."
        assert profile.lmp_at(0.2) == pytest.approx(20.0), "The end belongs to the last segment."
        with pytest.raises(ValueError, match="beyond the traced range"):
            profile.lmp_at(0.5)

    def test_violations_flag_decreasing_lmp(self):
        """Test that a decreasing step is reported."""
        profile = StaircaseProfile(
            bus=1,
            segments=(Segment(0.0, 1.0, 20.0), Segment(1.0, 2.0, 10.0)),
            jump_points=(1.0,),
            end=2.0,
            feasibility_limit=2.0,
            constraint_count=6,
        )
        assert any("decreases" in item for item in profile.violations()), "A decreasing LMP was not flagged."

    def test_frame_and_dict(self, two_bus: Network):
        """Test the tabular and dictionary forms of a profile.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        profile = trace_staircase(two_bus, 1)
        frame = profile.to_frame()
        assert list(frame.columns) == ["alpha_lo", "alpha_hi", "lmp"], f"Unexpected columns {list(frame.columns)}"
        assert len(frame) == 2, "One row per segment expected."
        assert StaircaseProfile.from_dict(profile.to_dict()) == profile, "Dictionary form lost information."


class TestOptimizeSingleBus:
    """Unit tests for optimize_single_bus."""

    def test_two_bus_optimum(self, two_bus: Network):
        """Test that the aggregator curtails exactly up to the first jump.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        result = optimize_single_bus(two_bus, 1)

        assert result.alpha_star == pytest.approx(0.1), f"Unexpected alpha* {result.alpha_star}"
        assert result.profit == pytest.approx(98.0), f"Unexpected profit {result.profit}"
        assert (result.lmp_before, result.lmp_after) == pytest.approx((10.0, 20.0)), "Unexpected LMPs."
        profits = {round(alpha, 9): profit for alpha, _, profit in result.evaluated_points}
        assert profits[0.2] == pytest.approx(96.0), "Profit at the feasibility limit should be 96."

    def test_six_bus_optimum(self, six_bus: Network):
        """Test that the best jump of the six-bus staircase is the fourth one.

        Args:
            six_bus (Network): Bundled six-bus case.
        """
        result = optimize_single_bus(six_bus, 1)

        assert result.alpha_star == pytest.approx(5.45), f"Unexpected alpha* {result.alpha_star}"
        assert result.profit == pytest.approx(1309.25), f"Unexpected profit {result.profit}"
        profits = [profit for _, _, profit in result.evaluated_points]
        assert profits == pytest.approx([0.0, 496.25, 765.0, 899.5, 1309.25, 1307.5]), "Unexpected candidate profits."

    def test_bus_without_share(self, two_bus: Network):
        """Test that a bus without aggregator generation is rejected.

        Args:
            two_bus (Network): Bundled two-bus case.
        """
        with pytest.raises(InvalidCurtailmentError, match="no aggregator generation"):
            optimize_single_bus(two_bus, 2)
