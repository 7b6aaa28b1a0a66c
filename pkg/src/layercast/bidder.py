"""Downstream bidding strategy.

For one layer a downstream peer wants B kbps and can buy from several
upstream links, paying unit price p_j plus congestion E_j(b_j) on link j.
Minimizing sum(b_j * p_j + E_j(b_j)) subject to sum(b_j) >= B is a classic
water-filling problem: every link that participates runs at the same
marginal cost p_j + E'_j(b_j) = lam, links whose entry threshold exceeds the
water level stay dry.

The auction protocol on top of the solver: every link starts at unit price
1; whenever a request is not fully granted the price on that link is raised
by one unit, capped by the peer's reference price; the unmet remainder is
re-split by water-filling over whatever headroom is left.  Grants already
held are kept and only the residual is re-bid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

from layercast.auction import Allocation, Bid, ProtocolError
from layercast.cost import CostCurve, inverse_marginal, marginal_streaming_cost
from layercast.quantize import from_fp, quantize_shares, to_fp_floor

WATER_FILL_TOL_KBPS = 0.01


def layer_budget(reference_price: int, layer_rate: float) -> float:
    """Worst-case spend for one layer: buying the full rate at the capped
    price.  Budgets do not carry over between layers."""
    if reference_price < 1 or int(reference_price) != reference_price:
        raise ValueError("reference price must be a positive integer")
    if layer_rate < 0:
        raise ValueError("layer rate must be non-negative")
    return float(reference_price) * layer_rate


class WaterFillResult(NamedTuple):
    quantities: list[float]
    level: float  # common marginal cost of the served links
    shortfall: bool


def _uniform_fill(target: float, price: float,
                  curves: Sequence[CostCurve]) -> tuple[list[float], float]:
    """Closed-form water level when every offer quotes the same price and
    uses the utilization family: the active links satisfy
    x_j - b_j = s * sqrt(x_j) with s = (sum x - target) / (sum sqrt x)."""
    n = len(curves)
    xs = [c.capacity for c in curves]
    caps = [c.max_allocation for c in curves]
    out = [0.0] * n
    pinned: set[int] = set()
    order = sorted(range(n), key=lambda j: (-xs[j], j))
    for _ in range(n + 1):
        t = target - sum(caps[j] for j in pinned)
        free = [j for j in order if j not in pinned]
        if not free or t <= 0:
            break
        sum_x = 0.0
        sum_sqrt = 0.0
        s = None
        active: list[int] = []
        for rank, j in enumerate(free):
            sum_x += xs[j]
            sum_sqrt += math.sqrt(xs[j])
            active.append(j)
            if sum_x <= t:
                continue
            s_try = (sum_x - t) / sum_sqrt
            nxt = free[rank + 1] if rank + 1 < len(free) else None
            if xs[j] >= s_try * s_try and (nxt is None or xs[nxt] <= s_try * s_try):
                s = s_try
                break
        if s is None:  # numerical fallback: everything participates
            s = max((sum_x - t) / sum_sqrt, 1e-12)
        overflow = False
        for j in active:
            b = xs[j] - s * math.sqrt(xs[j])
            if b > caps[j]:
                pinned.add(j)
                out[j] = caps[j]
                overflow = True
            else:
                out[j] = max(b, 0.0)
        for j in free:
            if j not in active:
                out[j] = 0.0
        if not overflow:
            return out, price + 1.0 / (s * s)
    return out, price + 1.0 / (max(s, 1e-12) ** 2)  # type: ignore[arg-type]


def water_fill(demand: float,
               offers: Sequence[tuple[int, CostCurve]],
               bases: Sequence[float] | None = None) -> WaterFillResult:
    """Split demand across priced links so marginal costs equalize.

    Returns per-offer quantities summing to min(demand, feasible capacity)
    within WATER_FILL_TOL_KBPS; the shortfall flag reports when capacity
    binds.  The water level is found by safeguarded bisection (with a Newton
    step where the curvature is available).

    bases gives an existing loading per offer that the new quantities come
    on top of: marginal costs are evaluated at base + delta on the original
    curve, so topping up held grants lands on the same split a from-scratch
    fill of base + demand would (links already loaded past the water level
    simply receive nothing)."""
    n = len(offers)
    if demand < 0:
        raise ValueError("demand must be non-negative")
    if n == 0:
        return WaterFillResult([], 0.0, demand > 0)
    base = [0.0] * n if bases is None else [max(0.0, b) for b in bases]
    if len(base) != n:
        raise ValueError("bases must match offers")
    if demand == 0:
        return WaterFillResult([0.0] * n, 0.0, False)
    prices = [p for p, _ in offers]
    curves = [c for _, c in offers]
    if any(p < 0 for p in prices):
        raise ValueError("offer prices must be non-negative")
    caps = [max(c.max_allocation - b0, 0.0) for c, b0 in zip(curves, base)]
    feasible = sum(caps)
    if demand >= feasible:
        return WaterFillResult(list(caps), math.inf, True)

    if (len(set(prices)) == 1 and not any(base)
            and all(c.kind == "utilization" for c in curves)):
        if n == 1:
            b = min(demand, caps[0])
            lam = prices[0] + marginal_streaming_cost(curves[0], b)
            return WaterFillResult([b], lam, False)
        qs, lam = _uniform_fill(demand, prices[0], curves)
        return WaterFillResult(qs, lam, False)

    thresholds = [p + marginal_streaming_cost(c, b0)
                  for (p, c), b0 in zip(offers, base)]

    def supply(lam: float) -> list[float]:
        return [min(max(inverse_marginal(c, p, lam) - b0, 0.0), cap)
                for (p, c), b0, cap in zip(offers, base, caps)]

    lo = min(thresholds)
    hi = max(thresholds) + 1.0
    while sum(supply(hi)) < demand:
        hi = lo + 2.0 * (hi - lo)
    lam = 0.5 * (lo + hi)
    qs = supply(lam)
    for _ in range(200):
        total = sum(qs)
        gap = total - demand
        if abs(gap) <= WATER_FILL_TOL_KBPS:
            break
        if gap > 0:
            hi = lam
        else:
            lo = lam
        deriv = 0.0
        for q, b0, cap, c in zip(qs, base, caps, curves):
            if 0.0 < q < cap:
                deriv += 1.0 / c.family.curvature(c.capacity, b0 + q)
        step = lam - gap / deriv if deriv > 0 else None
        lam = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
        qs = supply(lam)
    return WaterFillResult(qs, lam, False)


@dataclass
class LinkOffer:
    """Negotiation state of one upstream link inside a layer auction."""

    upstream_id: str
    curve: CostCurve
    price: int = 1
    requested_fp: int = 0  # standing request: kept grant plus outstanding ask
    granted_fp: int = 0
    supply_left_fp: int | None = None  # seller's advertised leftover, if known
    soft_cap_fp: int | None = None  # self-imposed total-purchase limit

    def headroom_fp(self) -> int:
        """Quanta still physically requestable on this link."""
        return max(0, to_fp_floor(self.curve.max_allocation) - self.granted_fp)

    def ask_cap_fp(self, displaceable_fp: int = 0) -> int:
        """How much extra is worth asking for.

        Physical headroom always binds.  The soft cap is the buyer's own
        walk-away point: congestion cost has a pole at the link capacity, so
        a peer starved everywhere else must not chase its residual into the
        last few percent of one link.  The seller's advertised leftover also
        binds: an ask beyond it can only ever be filled by displacing
        someone, so the escalation boundary widens the cap by the
        displaceable volume — bandwidth others hold at price levels a raised
        bid would beat — and quantity re-splits at frozen prices stay within
        what the seller actually has left."""
        cap = self.headroom_fp()
        if self.soft_cap_fp is not None:
            cap = min(cap, max(0, self.soft_cap_fp - self.granted_fp))
        if self.supply_left_fp is not None:
            cap = min(cap, self.supply_left_fp + max(0, displaceable_fp))
        return cap


@dataclass
class BidderState:
    """One downstream peer's view of one layer auction."""

    peer_id: str
    layer: int
    demand_fp: int
    reference_price: int
    links: dict[str, LinkOffer]
    budget_fp: int = field(init=False)

    def __post_init__(self) -> None:
        if self.reference_price < 1:
            raise ValueError("reference price must be at least 1")
        self.budget_fp = self.reference_price * self.demand_fp

    @property
    def granted_total_fp(self) -> int:
        return sum(ln.granted_fp for ln in self.links.values())

    @property
    def residual_fp(self) -> int:
        return self.demand_fp - self.granted_total_fp

    def payment_fp(self) -> int:
        return sum(ln.granted_fp * ln.price for ln in self.links.values())

    def _spread_residual(self,
                         displaceable: Mapping[str, int] | None = None
                         ) -> dict[str, int]:
        """Water-fill the unmet demand over links still worth asking on;
        returns the extra quanta to ask per link, never exceeding the
        residual.  Ask caps honour advertised leftovers; the escalation
        boundary passes the displaceable volume to let a contest-sized ask
        reach past a sold-out seller's zero."""
        residual = self.residual_fp
        if residual <= 0:
            return {}
        caps = {}
        for ln in self.links.values():
            room = 0
            if displaceable is not None:
                room = displaceable.get(ln.upstream_id, 0)
            cap = ln.ask_cap_fp(room)
            if cap > 0:
                caps[ln.upstream_id] = cap
        if not caps:
            return {}
        open_links = [self.links[j] for j in caps]
        offers = [(ln.price, ln.curve) for ln in open_links]
        bases = [from_fp(ln.granted_fp) for ln in open_links]
        fill = water_fill(from_fp(residual), offers, bases=bases)
        extras = quantize_shares(fill.quantities, residual,
                                 [caps[ln.upstream_id] for ln in open_links])
        return {ln.upstream_id: q for ln, q in zip(open_links, extras) if q > 0}

    def initial_bids(self) -> list[Bid]:
        """Open every link at unit price 1 and split the full layer demand by
        water-filling.  Zero-quantity bids are not submitted."""
        for ln in self.links.values():
            ln.price = 1
            ln.requested_fp = 0
            ln.granted_fp = 0
        extras = self._spread_residual()
        bids = []
        for upstream_id, q in extras.items():
            ln = self.links[upstream_id]
            ln.requested_fp = q
            bids.append(Bid(downstream_id=self.peer_id, layer=self.layer,
                            quantity_fp=q, unit_price=ln.price,
                            upstream_id=upstream_id))
        return bids

    def apply_grants(self, grants: Sequence[Allocation],
                     remaining: Mapping[str, int] | None = None) -> bool:
        """Record granted quantities and advertised leftovers; returns True
        when any grant shrank — the signal that higher-priced demand
        displaced this peer."""
        displaced = False
        for a in grants:
            ln = self.links.get(a.upstream_id)
            if ln is None:
                raise ProtocolError(
                    f"{self.peer_id}: grant from unknown upstream {a.upstream_id}")
            if a.granted_fp > ln.requested_fp:
                raise ProtocolError(
                    f"{self.peer_id}: grant {a.granted_fp} exceeds request "
                    f"{ln.requested_fp} on {a.upstream_id}")
            if a.granted_fp < ln.granted_fp:
                displaced = True
            ln.granted_fp = a.granted_fp
        if remaining:
            for upstream_id, left in remaining.items():
                ln = self.links.get(upstream_id)
                if ln is not None:
                    ln.supply_left_fp = left
        return displaced

    def revise_bids(self, grants: Sequence[Allocation],
                    remaining: Mapping[str, int] | None = None, *,
                    allow_bump: bool = True,
                    market_round: int | None = None,
                    displaceable: Mapping[str, int] | None = None) -> list[Bid] | None:
        """One protocol step after a round of grants.

        Under-granted links escalate their unit price by one (never past the
        reference price).  The unmet residual is then re-split by
        water-filling over the links that can still take it — partially
        filled asks re-route toward sellers with leftover supply at the
        frozen prices, and whatever cannot be placed anywhere stands where
        it was.  Returns None when the rebuilt requests are identical to the
        standing ones, which is the auction's termination signal.

        The engine runs escalation in lock-step: it settles quantities at
        frozen price levels (allow_bump=False) and raises prices once per
        round via escalate().  market_round is the engine's price clock —
        an ask that must displace someone joins at the going rate
        min(market_round, reference) rather than at the stale price of a
        so-far-quiet link, so a peer displaced late does not restart the
        ladder from the bottom.  Stand-alone callers omit it and get the
        plain one-step escalation.
        """
        self.apply_grants(grants, remaining)
        bumped = False
        if allow_bump:
            bumped = self._bump_prices(market_round, displaceable)
        return self._rebuild_requests(self._spread_residual(displaceable),
                                      market_round, changed=bumped)

    def escalate(self, market_round: int | None = None,
                 displaceable: Mapping[str, int] | None = None) -> list[Bid] | None:
        """End-of-round price escalation: every under-granted link below the
        reference price joins the next price level, and the unmet residual
        is re-spread at the new prices.  Returns None when every short link
        is already priced at the cap (or has nothing a higher price could
        win, when the displaceable-volume signal is available)."""
        if not self._bump_prices(market_round, displaceable):
            return None
        return self._rebuild_requests(self._spread_residual(displaceable),
                                      market_round, changed=True)

    def discount_prices(self, support: Mapping[str, int]) -> bool:
        """Settlement discount, run once after the ascending phase goes
        quiet: every link holding a grant drops its price to the highest
        level at which someone else still has an unfilled ask standing.
        Kept grants are protected against equal-priced asks, so matching the
        best standing competition keeps the grant safe while shedding any
        price escalated past what the final book supports.  Links holding
        only an ask keep their price — nothing is being overpaid there, and
        the standing ask is what holds the level up for everyone else."""
        changed = False
        for ln in self.links.values():
            if ln.granted_fp <= 0:
                continue
            target = max(1, support.get(ln.upstream_id, 0))
            if target < ln.price:
                ln.price = target
                changed = True
        return changed

    def settle_down(self, claimable: Mapping[str, int]) -> list[Bid] | None:
        """One-shot rebalance once prices stop moving: re-split the full
        demand at the final prices over what this peer can actually end up
        holding on each link — the grant it has, the seller's leftover, and
        bandwidth others hold at strictly lower price levels, which tier
        priority makes a deterministic win (the engine hands that sum in as
        claimable).  Grants above the new split are released; an incremental
        strategy never lets go of a granted slice, so a link pushed deep
        into its congestion knee while it was the only one open would stay
        there forever even when a cheaper link has since opened up.

        A peer that stays short even with every cap claimed never releases:
        its standing asks keep defending their price levels, and it only
        grows them into the claimable volume.  Either way the requests
        never total past the demand — other peers' releases can fill every
        standing ask at once, and a grant total past the demand would blow
        through the layer budget."""
        caps: dict[str, int] = {}
        for j, ln in self.links.items():
            cap = ln.granted_fp + max(0, claimable.get(j, 0))
            cap = min(cap, ln.granted_fp + ln.headroom_fp())
            if ln.soft_cap_fp is not None:
                cap = min(cap, ln.soft_cap_fp)
            if cap > 0:
                caps[j] = cap
        if sum(caps.values()) >= self.demand_fp:
            targets = {j: 0 for j in self.links}
            open_links = [self.links[j] for j in caps]
            offers = [(ln.price, ln.curve) for ln in open_links]
            fill = water_fill(from_fp(self.demand_fp), offers)
            got = quantize_shares(fill.quantities, self.demand_fp,
                                  [caps[ln.upstream_id] for ln in open_links])
            targets.update({ln.upstream_id: q
                            for ln, q in zip(open_links, got)})
        else:
            targets = {j: ln.requested_fp for j, ln in self.links.items()}
            room = {j: max(0, caps.get(j, 0) - ln.requested_fp)
                    for j, ln in self.links.items()}
            extra = self.demand_fp - sum(targets.values())
            if extra > 0 and any(room.values()):
                grow = [self.links[j] for j, r in room.items() if r > 0]
                offers = [(ln.price, ln.curve) for ln in grow]
                bases = [from_fp(ln.requested_fp) for ln in grow]
                fill = water_fill(from_fp(extra), offers, bases=bases)
                put = min(extra, sum(room[ln.upstream_id] for ln in grow))
                got = quantize_shares(fill.quantities, put,
                                      [room[ln.upstream_id] for ln in grow])
                for ln, q in zip(grow, got):
                    targets[ln.upstream_id] += q
        changed = False
        wire: list[Bid] = []
        for ln in self.links.values():
            target = targets.get(ln.upstream_id, 0)
            grown = target - ln.requested_fp
            if target != ln.requested_fp:
                ln.requested_fp = target
                changed = True
            if grown > 0:
                wire.append(Bid(downstream_id=self.peer_id, layer=self.layer,
                                quantity_fp=grown, unit_price=ln.price,
                                upstream_id=ln.upstream_id))
        if not changed:
            return None
        return wire

    def _bump_prices(self, market_round: int | None,
                     displaceable: Mapping[str, int] | None = None) -> bool:
        """Raise the price of every under-granted link: by one unit, or up
        to the market's price clock when the engine provides one.  Prices
        never fall and never pass the reference price.

        A bid loses to competition, not to physics: when the seller's round
        notice shows how much bandwidth others currently hold at prices up to
        ours (the displaceable volume), a link with nothing to displace does
        not escalate — a solo buyer of a sold-out seller would only be
        raising the price against itself.  A peer whose demand is already
        met never escalates, whatever its standing asks look like.

        Escalation is also windowed by the market clock: once the clock has
        passed this peer's reference price, the ascending phase is over for
        it.  Without the window, a peer whose displacement opportunity shows
        up late (churn keeps moving cheap grants around under heavy
        contention) would reopen the war one straggler at a time, and each
        straggler costs the auction a full extra round."""
        if self.residual_fp <= 0:
            return False
        if market_round is not None and market_round > self.reference_price:
            return False
        bumped = False
        for ln in self.links.values():
            if ln.granted_fp >= ln.requested_fp or ln.price >= self.reference_price:
                continue
            if displaceable is not None and displaceable.get(ln.upstream_id, 0) <= 0:
                continue
            if market_round is None:
                target = ln.price + 1
            else:
                target = max(ln.price + 1, min(market_round,
                                               self.reference_price))
            target = min(target, self.reference_price)
            if target > ln.price:
                ln.price = target
                bumped = True
        return bumped

    def _rebuild_requests(self, extras: Mapping[str, int],
                          market_round: int | None, *,
                          changed: bool) -> list[Bid] | None:
        level = None
        if market_round is not None:
            level = min(market_round, self.reference_price)
        standing = self._stand_pat(extras)
        wire: list[Bid] = []
        for ln in self.links.values():
            extra = extras.get(ln.upstream_id, 0)
            contesting = ln.supply_left_fp is None or extra > ln.supply_left_fp
            if extra > 0 and contesting and level is not None and ln.price < level:
                ln.price = level
                changed = True
            new_request = ln.granted_fp + extra + standing.get(ln.upstream_id, 0)
            if new_request != ln.requested_fp:
                ln.requested_fp = new_request
                changed = True
            if extra > 0:
                wire.append(Bid(downstream_id=self.peer_id, layer=self.layer,
                                quantity_fp=extra, unit_price=ln.price,
                                upstream_id=ln.upstream_id))
        if not changed:
            return None
        return wire

    def _stand_pat(self, extras: Mapping[str, int]) -> dict[str, int]:
        """Residual that the re-spread could not place stays on the book.

        An ask that is short at the reference price against a sold-out
        seller cannot be improved, but withdrawing it would be giving the
        bandwidth away: the standing ask is what defends the grant (and the
        price) against anyone trying to buy the same slice cheaper, and it
        is first in line if higher-priced demand ever frees supply.  Only
        the portion of the residual that the re-spread actually placed
        elsewhere leaves; the rest stands where it was, scaled down
        proportionally when some of it moved."""
        unplaced = self.residual_fp - sum(extras.values())
        if unplaced <= 0:
            return {}
        holders = [ln for ln in self.links.values()
                   if ln.upstream_id not in extras
                   and ln.requested_fp > ln.granted_fp]
        if not holders:
            return {}
        old = [ln.requested_fp - ln.granted_fp for ln in holders]
        kept = quantize_shares([float(o) for o in old], unplaced, old)
        return {ln.upstream_id: q for ln, q in zip(holders, kept) if q > 0}
