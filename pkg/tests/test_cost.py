"""Unit and property tests for the per-link congestion cost curves."""

import math

import pytest
from hypothesis import given, strategies as st

from layercast.cost import (CostCurve, CostDomainError, curvature,
                            inverse_marginal, marginal_streaming_cost,
                            streaming_cost)


def curve(x=1000.0):
    return CostCurve(capacity=x)


class TestStreamingCost:
    def test_zero_load_costs_nothing(self):
        assert streaming_cost(curve(), 0.0) == 0.0

    def test_half_utilization(self):
        assert streaming_cost(curve(), 500.0) == pytest.approx(1.0)

    def test_ninety_percent_utilization(self):
        # frozen: direct evaluation 900 / (1000 - 900)
        assert streaming_cost(curve(), 900.0) == pytest.approx(9.0)

    def test_diverges_near_capacity(self):
        assert streaming_cost(curve(), 999.999) > 1e5

    def test_load_at_capacity_is_a_domain_error(self):
        with pytest.raises(CostDomainError):
            streaming_cost(curve(), 1000.0)

    def test_negative_load_is_a_domain_error(self):
        with pytest.raises(CostDomainError):
            streaming_cost(curve(), -1.0)


class TestMarginalCost:
    def test_marginal_at_zero(self):
        # frozen against a finite-difference oracle, tolerance 1e-6
        assert marginal_streaming_cost(curve(), 0.0) == pytest.approx(0.001, abs=1e-6)

    def test_marginal_at_half_load(self):
        assert marginal_streaming_cost(curve(), 500.0) == pytest.approx(0.004, abs=1e-6)

    def test_marginal_domain_error(self):
        with pytest.raises(CostDomainError):
            marginal_streaming_cost(curve(), 1000.0)

    @given(st.floats(min_value=50.0, max_value=5000.0),
           st.floats(min_value=0.01, max_value=0.9))
    def test_matches_central_finite_differences(self, x, frac):
        b = frac * x
        h = min(1e-4 * x, (x - b) / 4, b / 2)
        c = curve(x)
        fd = (streaming_cost(c, b + h) - streaming_cost(c, b - h)) / (2 * h)
        assert marginal_streaming_cost(c, b) == pytest.approx(fd, rel=1e-4)

    @given(st.floats(min_value=50.0, max_value=5000.0),
           st.floats(min_value=0.0, max_value=0.95),
           st.floats(min_value=0.0, max_value=0.95))
    def test_cost_is_convex(self, x, fa, fb):
        c = curve(x)
        a, b = fa * x, fb * x
        mid = streaming_cost(c, (a + b) / 2)
        assert mid <= (streaming_cost(c, a) + streaming_cost(c, b)) / 2 + 1e-9


class TestInverseMarginal:
    def test_level_at_entry_threshold_buys_nothing(self):
        assert inverse_marginal(curve(), 1.0, 1.001) == 0.0

    def test_level_below_price_buys_nothing(self):
        assert inverse_marginal(curve(), 2.0, 1.5) == 0.0

    def test_high_level_loads_the_link(self):
        # frozen: bisection oracle on price + E'(b) = level gave 968.393
        assert inverse_marginal(curve(), 1.0, 2.001) == pytest.approx(968.4, abs=0.1)

    def test_clamps_below_the_pole(self):
        b = inverse_marginal(curve(), 1.0, 1e12)
        assert b <= curve().max_allocation

    def test_rejects_nonpositive_level(self):
        with pytest.raises(ValueError):
            inverse_marginal(curve(), 1.0, 0.0)

    @given(st.floats(min_value=50.0, max_value=5000.0),
           st.integers(min_value=0, max_value=4),
           st.floats(min_value=0.0, max_value=0.98))
    def test_round_trips_the_marginal(self, x, price, frac):
        c = curve(x)
        b = frac * x
        level = price + marginal_streaming_cost(c, b)
        assert inverse_marginal(c, price, level) == pytest.approx(b, abs=0.01)


class TestCurveValidation:
    def test_positive_capacity_required(self):
        with pytest.raises(ValueError):
            CostCurve(capacity=0.0)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            CostCurve(capacity=100.0, kind="free-lunch")

    def test_max_allocation_sits_just_below_capacity(self):
        c = curve(1000.0)
        assert 0 < c.capacity - c.max_allocation < 0.01

    def test_curvature_is_positive(self):
        assert curvature(curve(), 500.0) > 0.0

    def test_curvature_grows_towards_the_pole(self):
        c = curve()
        assert curvature(c, 900.0) > curvature(c, 100.0)


def test_cost_and_marginal_are_finite_across_the_domain():
    c = curve(777.7)
    for frac in (0.0, 0.25, 0.5, 0.75, 0.99):
        b = frac * c.max_allocation
        assert math.isfinite(streaming_cost(c, b))
        assert math.isfinite(marginal_streaming_cost(c, b))
