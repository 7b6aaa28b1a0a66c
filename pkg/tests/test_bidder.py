"""Downstream strategy: budgets, water-filling splits, price escalation."""

import pytest
from hypothesis import given, settings, strategies as st

from layercast.auction import Allocation, ProtocolError
from layercast.bidder import (BidderState, LinkOffer, layer_budget, water_fill)
from layercast.cost import CostCurve, marginal_streaming_cost


class TestLayerBudget:
    def test_budget_is_price_times_rate(self):
        assert layer_budget(3, 200.0) == 600.0

    def test_unit_price_budget(self):
        assert layer_budget(1, 100.0) == 100.0

    def test_zero_rate_layer(self):
        assert layer_budget(2, 0.0) == 0.0

    def test_price_must_be_positive_integer(self):
        with pytest.raises(ValueError):
            layer_budget(0, 100.0)
        with pytest.raises(ValueError):
            layer_budget(1.5, 100.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            layer_budget(2, -1.0)


def offers(*pairs):
    return [(p, CostCurve(capacity=x)) for p, x in pairs]


class TestWaterFill:
    def test_symmetric_links_split_evenly(self):
        result = water_fill(200.0, offers((1, 1000.0), (1, 1000.0)))
        assert result.quantities == pytest.approx([100.0, 100.0], abs=0.1)
        assert not result.shortfall

    def test_cheap_link_takes_everything_when_marginals_stay_below_entry(self):
        # at b=200 the cheap link's marginal 1 + 1000/800^2 ~ 1.0016 is still
        # below the expensive link's entry threshold 2.001
        result = water_fill(200.0, offers((1, 1000.0), (2, 1000.0)))
        assert result.quantities[0] == pytest.approx(200.0, abs=0.1)
        assert result.quantities[1] == pytest.approx(0.0, abs=0.1)

    def test_unequal_capacities_equalize_marginals(self):
        # frozen against the 0.1 kbps greedy grid oracle: (3.0, 297.0)
        result = water_fill(300.0, offers((1, 500.0), (1, 1000.0)))
        assert result.quantities[0] == pytest.approx(2.95, abs=0.5)
        assert result.quantities[1] == pytest.approx(297.05, abs=0.5)
        assert sum(result.quantities) == pytest.approx(300.0, abs=0.01)

    def test_shortfall_returns_the_caps(self):
        result = water_fill(5000.0, offers((1, 1000.0), (1, 1000.0)))
        assert result.shortfall
        assert sum(result.quantities) == pytest.approx(2000.0, rel=1e-5)

    def test_zero_demand(self):
        result = water_fill(0.0, offers((1, 1000.0)))
        assert result.quantities == [0.0]
        assert not result.shortfall

    def test_no_offers_flags_shortfall(self):
        assert water_fill(10.0, []).shortfall

    def test_negative_demand_rejected(self):
        with pytest.raises(ValueError):
            water_fill(-1.0, offers((1, 1000.0)))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(min_value=1, max_value=4),
                              st.floats(min_value=300.0, max_value=2000.0)),
                    min_size=1, max_size=4),
           st.floats(min_value=0.05, max_value=0.5))
    def test_kkt_conditions_hold(self, pairs, demand_frac):
        offer_list = offers(*pairs)
        demand = demand_frac * sum(x for _, x in pairs)
        result = water_fill(demand, offer_list)
        assert sum(result.quantities) == pytest.approx(demand, abs=0.02)
        lam = result.level
        for b, (p, curve) in zip(result.quantities, offer_list):
            if b > 0.01:
                assert p + marginal_streaming_cost(curve, b) == pytest.approx(
                    lam, abs=1e-3)
            else:
                assert p + marginal_streaming_cost(curve, 0.0) >= lam - 1e-3


def make_bidder(demand=200.0, reference=3, capacities=(1000.0,)):
    links = {
        f"u{j}": LinkOffer(upstream_id=f"u{j}", curve=CostCurve(capacity=x))
        for j, x in enumerate(capacities)
    }
    return BidderState(peer_id="d0", layer=0, demand_fp=int(demand * 10),
                       reference_price=reference, links=links)


def grant(bidder, upstream_id, amount_fp):
    ln = bidder.links[upstream_id]
    return Allocation(downstream_id=bidder.peer_id, upstream_id=upstream_id,
                      layer=bidder.layer, granted_fp=amount_fp,
                      unit_price=ln.price)


class TestInitialBids:
    def test_single_link_asks_full_demand_at_price_one(self):
        bidder = make_bidder()
        bids = bidder.initial_bids()
        assert len(bids) == 1
        assert bids[0].quantity_fp == 2000
        assert bids[0].unit_price == 1

    def test_symmetric_links_share_the_demand(self):
        bidder = make_bidder(demand=300.0, capacities=(1000.0, 1000.0, 1000.0))
        bids = bidder.initial_bids()
        assert sorted(b.quantity_fp for b in bids) == [1000, 1000, 1000]
        assert all(b.unit_price == 1 for b in bids)

    def test_dried_up_links_produce_no_bids(self):
        bidder = make_bidder(capacities=(0.05, 0.08))
        assert bidder.initial_bids() == []
        assert bidder.residual_fp == bidder.demand_fp


class TestReviseBids:
    def test_fully_granted_means_done(self):
        bidder = make_bidder()
        bidder.initial_bids()
        assert bidder.revise_bids([grant(bidder, "u0", 2000)]) is None
        assert bidder.residual_fp == 0

    def test_short_grant_escalates_and_rebids_the_residual(self):
        bidder = make_bidder()
        bidder.initial_bids()
        bids = bidder.revise_bids([grant(bidder, "u0", 1500)])
        assert len(bids) == 1
        assert bids[0].quantity_fp == 500
        assert bids[0].unit_price == 2

    def test_short_at_the_price_cap_means_done(self):
        bidder = make_bidder(reference=1)
        bidder.initial_bids()
        assert bidder.revise_bids([grant(bidder, "u0", 1500)]) is None
        assert bidder.residual_fp == 500

    def test_hopeless_ask_stands_on_the_book(self):
        # short at the reference price against a sold-out seller with no
        # alternative: the ask stays standing (it defends the price level)
        bidder = make_bidder(reference=2)
        bidder.initial_bids()
        bidder.links["u0"].price = 2
        out = bidder.revise_bids([grant(bidder, "u0", 1200)],
                                 remaining={"u0": 0}, allow_bump=False)
        assert out is None
        assert bidder.links["u0"].requested_fp == 2000
        assert bidder.links["u0"].granted_fp == 1200

    def test_partial_rerouting_keeps_the_rest_standing(self):
        bidder = make_bidder(demand=200.0, reference=2,
                             capacities=(1000.0, 60.0))
        bidder.initial_bids()
        bidder.links["u0"].price = 2
        bidder.links["u1"].price = 2
        bidder.links["u0"].requested_fp = 2000
        bidder.links["u1"].requested_fp = 0
        # u0 sold out; u1 can physically host only ~59.9 kbps of the ask
        bidder.revise_bids([grant(bidder, "u0", 0)],
                           remaining={"u0": 0}, allow_bump=False)
        moved = bidder.links["u1"].requested_fp
        assert 0 < moved < 2000
        assert bidder.links["u0"].requested_fp == 2000 - moved

    def test_sold_out_seller_at_cap_triggers_rerouting(self):
        bidder = make_bidder(reference=2, capacities=(1000.0, 1000.0))
        bidder.initial_bids()
        bidder.links["u0"].price = 2
        bidder.links["u1"].price = 2
        bidder.links["u0"].requested_fp = 2000
        bidder.links["u1"].requested_fp = 0
        # u0 grants nothing and advertises zero supply: the ask must move to u1
        wire = bidder.revise_bids([grant(bidder, "u0", 0)],
                                  remaining={"u0": 0}, allow_bump=False)
        assert wire is not None
        assert [b.upstream_id for b in wire] == ["u1"]
        assert bidder.links["u0"].requested_fp == 0

    def test_grant_above_request_is_a_protocol_error(self):
        bidder = make_bidder()
        bidder.initial_bids()
        with pytest.raises(ProtocolError):
            bidder.apply_grants([grant(bidder, "u0", 2500)])

    def test_grant_from_stranger_is_a_protocol_error(self):
        bidder = make_bidder()
        bidder.initial_bids()
        rogue = Allocation(downstream_id="d0", upstream_id="u9", layer=0,
                           granted_fp=10, unit_price=1)
        with pytest.raises(ProtocolError):
            bidder.apply_grants([rogue])


class TestEscalation:
    def test_prices_never_fall_and_never_pass_the_reference(self):
        bidder = make_bidder(reference=3)
        bidder.initial_bids()
        seen = [bidder.links["u0"].price]
        for _ in range(5):
            bidder.revise_bids([grant(bidder, "u0", 100)])
            seen.append(bidder.links["u0"].price)
        assert seen == sorted(seen)
        assert seen[-1] == 3

    def test_market_clock_lets_late_bidders_catch_up(self):
        bidder = make_bidder(reference=4)
        bidder.initial_bids()
        wire = bidder.escalate(market_round=3)
        assert wire is not None
        assert bidder.links["u0"].price == 3

    def test_market_clock_respects_the_reference_price(self):
        bidder = make_bidder(reference=2)
        bidder.initial_bids()
        bidder.escalate(market_round=2)
        assert bidder.links["u0"].price == 2

    def test_no_escalation_once_the_clock_passes_the_reference(self):
        # The ascending phase is over for a peer once the clock moves past
        # its price cap; a late displacement opportunity no longer reopens it.
        bidder = make_bidder(reference=2)
        bidder.initial_bids()
        assert bidder.escalate(market_round=4) is None
        assert bidder.links["u0"].price == 1

    def test_escalate_with_nothing_short_is_a_no_op(self):
        bidder = make_bidder()
        bidder.initial_bids()
        bidder.apply_grants([grant(bidder, "u0", 2000)])
        assert bidder.escalate(2) is None


class TestBudget:
    def test_budget_is_reference_price_times_demand(self):
        bidder = make_bidder(demand=200.0, reference=3)
        assert bidder.budget_fp == 3 * 2000

    @given(st.integers(min_value=1, max_value=4),
           st.lists(st.integers(min_value=0, max_value=2000),
                    min_size=1, max_size=3))
    def test_payment_never_exceeds_budget(self, reference, grants_fp):
        bidder = make_bidder(demand=200.0, reference=reference,
                             capacities=tuple(1000.0 for _ in grants_fp))
        bidder.initial_bids()
        for j, g in enumerate(grants_fp):
            ln = bidder.links[f"u{j}"]
            g = min(g, ln.requested_fp)
            bidder.revise_bids([grant(bidder, f"u{j}", g)])
        assert bidder.payment_fp() <= bidder.budget_fp

    def test_reference_price_below_one_rejected(self):
        with pytest.raises(ValueError):
            make_bidder(reference=0)


class TestAskCaps:
    def test_soft_cap_limits_the_ask(self):
        ln = LinkOffer(upstream_id="u0", curve=CostCurve(capacity=1000.0),
                       soft_cap_fp=3000)
        assert ln.ask_cap_fp() == 3000

    def test_advertised_supply_binds_the_ask(self):
        ln = LinkOffer(upstream_id="u0", curve=CostCurve(capacity=1000.0),
                       supply_left_fp=500)
        assert ln.ask_cap_fp() == 500

    def test_displaceable_volume_widens_the_cap(self):
        # At the escalation boundary an ask may reach past the advertised
        # leftover by however much a raised price could displace.
        ln = LinkOffer(upstream_id="u0", curve=CostCurve(capacity=1000.0),
                       supply_left_fp=0)
        assert ln.ask_cap_fp() == 0
        assert ln.ask_cap_fp(displaceable_fp=700) == 700

    def test_headroom_shrinks_with_grants(self):
        ln = LinkOffer(upstream_id="u0", curve=CostCurve(capacity=100.0))
        before = ln.headroom_fp()
        ln.granted_fp = 400
        assert ln.headroom_fp() == before - 400
