"""Scenario orchestration: full runs of the layered mechanism and of the
layer-agnostic combined-auction baseline.

The layered run walks phases 0..M.  In phase k every upstream that still has
upload left opens a layer-k auction, every downstream subscribed at level k
or above negotiates for B_k, and only then does the system advance to layer
k+1, with link headroom and upload remainders carried forward.  The baseline
runs one combined auction in which all layers' bids compete at once — layer
demand is split over the links' full capacity, and physical link limits are
enforced at clearing time instead of via reduced offer curves.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from layercast.auction import (AuctionLedger, Bid, TraceFn, advance_layer,
                               allocate_round, run_auction_rounds,
                               run_layer_auction)
from layercast.bidder import BidderState, LinkOffer, water_fill
from layercast.cost import CostCurve, streaming_cost
from layercast.overlay import Overlay
from layercast.quantize import from_fp, quantize_shares, to_fp, to_fp_floor

PROPOSED = "proposed"
BASELINE = "baseline"


@dataclass
class GrantRecord:
    downstream_id: str
    upstream_id: str
    layer: int
    granted_fp: int
    unit_price: int


@dataclass
class ScenarioResult:
    """Final grants, prices, payments and convergence counts of one run."""

    mode: str
    overlay: Overlay
    grants: list[GrantRecord]
    payments_fp: dict[tuple[str, int], int]  # (downstream, layer) -> currency
    residuals_fp: dict[tuple[str, int], int]
    layer_rounds: list[int]
    round_limit: int

    def grant_map(self) -> dict[tuple[str, str, int], int]:
        return {(g.downstream_id, g.upstream_id, g.layer): g.granted_fp
                for g in self.grants}

    def link_totals_fp(self) -> dict[tuple[str, str], int]:
        """Aggregate granted bandwidth per (downstream, upstream) link."""
        totals: dict[tuple[str, str], int] = {}
        for g in self.grants:
            key = (g.downstream_id, g.upstream_id)
            totals[key] = totals.get(key, 0) + g.granted_fp
        return totals

    def layer_total_fp(self, downstream_id: str, layer: int) -> int:
        return sum(g.granted_fp for g in self.grants
                   if g.downstream_id == downstream_id and g.layer == layer)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "overlay": self.overlay.to_json_dict(),
            "grants": [{"down": g.downstream_id, "up": g.upstream_id,
                        "layer": g.layer, "granted_fp": g.granted_fp,
                        "price": g.unit_price} for g in self.grants],
            "payments_fp": [{"down": d, "layer": k, "paid_fp": v}
                            for (d, k), v in sorted(self.payments_fp.items())],
            "residuals_fp": [{"down": d, "layer": k, "residual_fp": v}
                             for (d, k), v in sorted(self.residuals_fp.items())],
            "layer_rounds": list(self.layer_rounds),
            "round_limit": self.round_limit,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "ScenarioResult":
        return cls(
            mode=data["mode"],
            overlay=Overlay.from_json_dict(data["overlay"]),
            grants=[GrantRecord(r["down"], r["up"], r["layer"],
                                r["granted_fp"], r["price"])
                    for r in data["grants"]],
            payments_fp={(r["down"], r["layer"]): r["paid_fp"]
                         for r in data["payments_fp"]},
            residuals_fp={(r["down"], r["layer"]): r["residual_fp"]
                          for r in data["residuals_fp"]},
            layer_rounds=list(data["layer_rounds"]),
            round_limit=data["round_limit"],
        )


def _default_round_limit(overlay: Overlay) -> int:
    p_max = max((c.reference_price for c in overlay.classes), default=0)
    return p_max + 2


# A buyer never plans to hold more than this share of one physical link:
# the congestion cost b/(x-b) explodes near the capacity, so the last few
# percent of a link are never worth their price, whatever the residual.
LINK_SOFT_UTILIZATION = 0.95


def _link_offer(link, used_fp: int,
                supply_left_fp: int | None = None) -> LinkOffer | None:
    """Offer curve for the bandwidth still unused on a physical link; None
    once the link cannot host even one more quantum.  supply_left_fp seeds
    the bidder with the seller's opening announcement of what is on sale."""
    capacity = link.available_bandwidth - from_fp(used_fp)
    if capacity <= 0:
        return None
    curve = CostCurve(capacity=capacity)
    if to_fp_floor(curve.max_allocation) <= 0:
        return None
    soft_fp = to_fp_floor(LINK_SOFT_UTILIZATION * link.available_bandwidth) - used_fp
    if soft_fp <= 0:
        return None
    return LinkOffer(upstream_id=link.upstream_id, curve=curve,
                     supply_left_fp=supply_left_fp, soft_cap_fp=soft_fp)


def run_scenario(overlay: Overlay, *, max_rounds: int | None = None,
                 trace: TraceFn | None = None) -> ScenarioResult:
    """Run the layered mechanism: one auction phase per layer, base first."""
    spec = overlay.layer_spec
    limit = max_rounds if max_rounds is not None else _default_round_limit(overlay)
    ledgers = {u.id: AuctionLedger(upstream_id=u.id, upload_fp=to_fp(u.upload),
                                   top_layer=spec.top_layer)
               for u in overlay.upstreams()}
    done: set[str] = set()
    used_fp: dict[tuple[str, str], int] = {}
    grants: list[GrantRecord] = []
    payments: dict[tuple[str, int], int] = {}
    residuals: dict[tuple[str, int], int] = {}
    layer_rounds: list[int] = []

    for k in range(spec.count):
        open_ids = []
        for j in sorted(ledgers):
            if j in done:
                continue
            nxt = advance_layer(ledgers[j])
            if nxt is None:
                done.add(j)
            else:
                open_ids.append(j)
        bidders = []
        for peer in overlay.downstreams():
            if peer.subscribed_level < k:
                continue
            links: dict[str, LinkOffer] = {}
            for link in overlay.links_of(peer.id):
                if link.upstream_id not in open_ids:
                    continue
                offer = _link_offer(link, used_fp.get((peer.id, link.upstream_id), 0),
                                    ledgers[link.upstream_id].remaining_fp)
                if offer is not None:
                    links[offer.upstream_id] = offer
            bidders.append(BidderState(
                peer_id=peer.id, layer=k, demand_fp=to_fp(spec.rates[k]),
                reference_price=overlay.class_of(peer).reference_price,
                links=links))
        outcome = run_layer_auction(overlay, ledgers, k, bidders,
                                    max_rounds=limit, trace=trace)
        layer_rounds.append(outcome.rounds)
        for a in outcome.allocations:
            grants.append(GrantRecord(a.downstream_id, a.upstream_id, k,
                                      a.granted_fp, a.unit_price))
            key = (a.downstream_id, a.upstream_id)
            used_fp[key] = used_fp.get(key, 0) + a.granted_fp
        for b in bidders:
            payments[(b.peer_id, k)] = outcome.payments_fp[b.peer_id]
            residuals[(b.peer_id, k)] = b.residual_fp
    return ScenarioResult(mode=PROPOSED, overlay=overlay, grants=grants,
                          payments_fp=payments, residuals_fp=residuals,
                          layer_rounds=layer_rounds, round_limit=limit)


def _baseline_bidders(overlay: Overlay) -> list[BidderState]:
    spec = overlay.layer_spec
    bidders = []
    for peer in overlay.downstreams():
        price_cap = overlay.class_of(peer).reference_price
        for k in range(peer.subscribed_level + 1):
            links = {}
            for link in overlay.links_of(peer.id):
                up = overlay.peer(link.upstream_id)
                offer = _link_offer(link, 0, to_fp(up.upload))
                if offer is not None:
                    links[offer.upstream_id] = offer
            bidders.append(BidderState(
                peer_id=peer.id, layer=k, demand_fp=to_fp(spec.rates[k]),
                reference_price=price_cap, links=links))
    return bidders


def run_baseline(overlay: Overlay, *, max_rounds: int | None = None,
                 trace: TraceFn | None = None) -> ScenarioResult:
    """Run the layer-agnostic ablation: one combined auction per upstream in
    which every subscribed layer of every peer competes simultaneously.

    The single combined auction does the work of all layer phases at once,
    so its default round budget is the per-layer budget times the number of
    layers."""
    if max_rounds is not None:
        limit = max_rounds
    else:
        limit = _default_round_limit(overlay) * overlay.layer_spec.count
    supply = {u.id: to_fp(u.upload) for u in overlay.upstreams()}
    link_caps: dict[str, dict[str, int]] = {j: {} for j in supply}
    for link in overlay.links:
        cap_fp = to_fp_floor(CostCurve(capacity=link.available_bandwidth).max_allocation)
        link_caps[link.upstream_id][link.downstream_id] = cap_fp
    bidders = _baseline_bidders(overlay)
    rounds, _ = run_auction_rounds(supply, bidders, link_caps_fp=link_caps,
                                   max_rounds=limit, trace=trace,
                                   label="combined auction",
                                   reclear_on_decrease=True)
    grants: list[GrantRecord] = []
    payments: dict[tuple[str, int], int] = {}
    residuals: dict[tuple[str, int], int] = {}
    for b in sorted(bidders, key=lambda b: (b.peer_id, b.layer)):
        pay = 0
        for j in sorted(b.links):
            ln = b.links[j]
            if ln.granted_fp > 0:
                grants.append(GrantRecord(b.peer_id, j, b.layer,
                                          ln.granted_fp, ln.price))
                pay += ln.granted_fp * ln.price
        payments[(b.peer_id, b.layer)] = pay
        residuals[(b.peer_id, b.layer)] = b.residual_fp
    return ScenarioResult(mode=BASELINE, overlay=overlay, grants=grants,
                          payments_fp=payments, residuals_fp=residuals,
                          layer_rounds=[rounds], round_limit=limit)


def convergence_stats(result: ScenarioResult) -> dict:
    rounds = list(result.layer_rounds)
    return {
        "per_layer_rounds": rounds,
        "max_rounds": max(rounds, default=0),
        "total_rounds": sum(rounds),
        "round_limit": result.round_limit,
        "hit_round_limit": any(r >= result.round_limit for r in rounds),
    }


def realized_cost(links: Mapping[str, LinkOffer]) -> float:
    """A bidder's objective on its final grants: payments plus congestion."""
    total = 0.0
    for ln in links.values():
        b = from_fp(ln.granted_fp)
        total += ln.price * b + streaming_cost(ln.curve, b)
    return total


def find_improving_deviation(supply_fp: Mapping[str, int],
                             bidders: Sequence[BidderState],
                             peer_id: str, layer: int = 0,
                             tol_fp: int = 1) -> dict | None:
    """Search all alternative price vectors for one bidder against the frozen
    final requests of the others.

    The deviator re-splits its full layer demand by water-filling at each
    candidate price vector and the upstreams clear once.  A deviation counts
    only if it keeps at least the equilibrium bandwidth (within tol_fp); it
    is improving if its realized cost is strictly lower.  Returns a
    description of the best improving deviation, or None — the fixed point
    is an empirical equilibrium when every peer yields None.
    """
    deviator = next(b for b in bidders
                    if b.peer_id == peer_id and b.layer == layer)
    others = [b for b in bidders
              if not (b.peer_id == peer_id and b.layer == layer)]
    link_ids = sorted(j for j in deviator.links if j in supply_fp)
    if not link_ids:
        return None
    eq_granted = deviator.granted_total_fp
    eq_cost = realized_cost(deviator.links)
    best: dict | None = None
    for prices in itertools.product(range(1, deviator.reference_price + 1),
                                    repeat=len(link_ids)):
        offers = [(p, deviator.links[j].curve) for p, j in zip(prices, link_ids)]
        fill = water_fill(from_fp(deviator.demand_fp), offers)
        caps = [to_fp_floor(deviator.links[j].curve.max_allocation)
                for j in link_ids]
        asks = quantize_shares(fill.quantities, deviator.demand_fp, caps)
        granted_fp: dict[str, int] = {}
        for j, price, ask in zip(link_ids, prices, asks):
            entries = [Bid(downstream_id=b.peer_id, layer=b.layer,
                           quantity_fp=ln.requested_fp - ln.granted_fp,
                           unit_price=ln.price, upstream_id=j,
                           kept_fp=ln.granted_fp)
                       for b in others
                       for ln in [b.links.get(j)] if ln is not None
                       if ln.requested_fp > 0 or ln.granted_fp > 0]
            if ask > 0:
                entries.append(Bid(downstream_id=peer_id, layer=layer,
                                   quantity_fp=ask, unit_price=price,
                                   upstream_id=j))
            for a in allocate_round(supply_fp[j], entries):
                if a.downstream_id == peer_id and a.layer == layer:
                    granted_fp[j] = a.granted_fp
        total = sum(granted_fp.values())
        if total < eq_granted - tol_fp:
            continue
        cost = 0.0
        for j, price in zip(link_ids, prices):
            b = from_fp(granted_fp.get(j, 0))
            cost += price * b + streaming_cost(deviator.links[j].curve, b)
        if cost < eq_cost - 1e-9 and (best is None or cost < best["cost"]):
            best = {"prices": dict(zip(link_ids, prices)), "cost": cost,
                    "granted_fp": total, "equilibrium_cost": eq_cost,
                    "equilibrium_granted_fp": eq_granted}
    return best
