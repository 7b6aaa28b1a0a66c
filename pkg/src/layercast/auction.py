"""Upstream-side auction mechanism.

Each upstream sells its remaining upload bandwidth one layer at a time.
Within a layer the auction is an ascending-price, multi-round exchange:
downstream peers hold standing requests (a kept grant plus an outstanding
ask at their current unit price), and every round the upstream re-clears its
full layer supply over the standing requests.  Higher prices are served
first; inside a price tier, bandwidth already granted is protected before
new asks are considered, and whatever a tier cannot fully serve is split in
proportion to the requested quantities.  A grant can therefore only shrink
when strictly higher-priced demand displaces it.

The loop reaches a fixed point when no bidder changes any request between
consecutive rounds — everyone is either satisfied or out of price headroom
and out of alternative links.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from layercast.quantize import from_fp


class ProtocolError(RuntimeError):
    """A bid or grant violated the bid/grant exchange rules."""


class ConvergenceError(RuntimeError):
    """An auction exceeded its round budget without reaching a fixed point."""


class LedgerStateError(RuntimeError):
    """A ledger operation was called in the wrong layer state."""


@dataclass(frozen=True)
class Bid:
    """A downstream peer's standing request on one upstream link.

    quantity_fp is the outstanding ask (beyond any kept grant) in 0.1 kbps
    quanta; kept_fp carries bandwidth granted in earlier rounds of the same
    auction, which the upstream protects against equal-priced competition.
    Wire bids from peers always have kept_fp 0.
    """

    downstream_id: str
    layer: int
    quantity_fp: int
    unit_price: int
    upstream_id: str = ""
    kept_fp: int = 0

    def __post_init__(self) -> None:
        if self.quantity_fp < 0 or self.kept_fp < 0:
            raise ValueError("bid quantities must be non-negative")
        if self.unit_price < 1 or int(self.unit_price) != self.unit_price:
            raise ValueError("unit price must be a positive integer")

    @property
    def quantity(self) -> float:
        return from_fp(self.quantity_fp)


@dataclass(frozen=True)
class Allocation:
    """Bandwidth granted to one downstream peer for one layer."""

    downstream_id: str
    upstream_id: str
    layer: int
    granted_fp: int
    unit_price: int

    @property
    def granted(self) -> float:
        return from_fp(self.granted_fp)

    @property
    def payment_fp(self) -> int:
        return self.granted_fp * self.unit_price


def _split_proportional(amount_fp: int, demands_fp: Sequence[int]) -> list[int]:
    """Integer proportional split with largest-remainder rounding; exact and
    deterministic (remainder ties go to the earlier entry)."""
    total = sum(demands_fp)
    if total <= amount_fp:
        return list(demands_fp)
    shares = [amount_fp * d // total for d in demands_fp]
    leftover = amount_fp - sum(shares)
    if leftover > 0:
        order = sorted(range(len(demands_fp)),
                       key=lambda i: (-(amount_fp * demands_fp[i] % total), i))
        for i in order[:leftover]:
            shares[i] += 1
    return shares


def allocate_round(remaining_fp: int, bids: Sequence[Bid], *,
                   link_caps_fp: Mapping[str, int] | None = None) -> list[Allocation]:
    """Clear one upstream's supply over the standing bids of one round.

    Price tiers are served from the highest down.  Within a tier, kept
    grants are refilled before outstanding asks; when the tier cannot be
    fully served, each pool is split proportionally to its demands.  With
    link_caps_fp given (combined-auction mode), a downstream peer's total
    demand across layers is first truncated to its link capacity, lower
    layers keeping priority on the ask.

    Returns one Allocation per bid, in bid order, zero grants included.
    """
    if remaining_fp < 0:
        raise ValueError("remaining supply must be non-negative")
    n = len(bids)
    if n == 0:
        return []
    first = bids[0].upstream_id
    for b in bids:
        if b.upstream_id != first:
            raise ProtocolError("allocate_round mixes upstream targets")
    kept = [b.kept_fp for b in bids]
    extra = [b.quantity_fp for b in bids]

    if link_caps_fp is not None:
        by_down: dict[str, list[int]] = {}
        for i, b in enumerate(bids):
            by_down.setdefault(b.downstream_id, []).append(i)
        for down, idxs in by_down.items():
            cap = link_caps_fp.get(down)
            if cap is None:
                continue
            # Volume already on the books holds its claim on the pair cap;
            # newly asked volume only competes for the slack.  Letting a
            # fresh ask clip a sibling layer's kept grant would shuttle
            # quanta between the layers of one peer forever, a quantum per
            # clearing pass.
            avail = max(cap, 0)
            for i in sorted(idxs, key=lambda i: bids[i].layer):
                kept[i] = min(kept[i], avail)
                avail -= kept[i]
            for i in sorted(idxs, key=lambda i: (-bids[i].unit_price,
                                                 bids[i].layer)):
                extra[i] = min(extra[i], avail)
                avail -= extra[i]

    granted = [0] * n
    left = remaining_fp
    for price in sorted({b.unit_price for b in bids}, reverse=True):
        tier = sorted((i for i in range(n) if bids[i].unit_price == price),
                      key=lambda i: (bids[i].downstream_id, bids[i].layer))
        for demands in ([kept[i] for i in tier], [extra[i] for i in tier]):
            if left <= 0:
                break
            pool = _split_proportional(left, demands)
            for i, q in zip(tier, pool):
                granted[i] += q
            left -= sum(pool)
    return [Allocation(downstream_id=b.downstream_id, upstream_id=b.upstream_id,
                       layer=b.layer, granted_fp=g, unit_price=b.unit_price)
            for b, g in zip(bids, granted)]


@dataclass
class LayerRecord:
    """One layer's slice of an upstream ledger."""

    layer: int
    remaining_before_fp: int
    rounds: int = 0
    grants_fp: dict[str, int] = field(default_factory=dict)
    closed: bool = False

    @property
    def granted_total_fp(self) -> int:
        return sum(self.grants_fp.values())


@dataclass
class AuctionLedger:
    """Per-upstream account of upload bandwidth sold across layers."""

    upstream_id: str
    upload_fp: int
    top_layer: int
    records: dict[int, LayerRecord] = field(default_factory=dict)

    @property
    def remaining_fp(self) -> int:
        return self.upload_fp - sum(r.granted_total_fp for r in self.records.values())

    def open_record(self) -> LayerRecord | None:
        for rec in self.records.values():
            if not rec.closed:
                return rec
        return None

    def open_layer(self, layer: int) -> LayerRecord:
        if layer in self.records:
            raise LedgerStateError(
                f"{self.upstream_id}: layer {layer} already opened")
        if self.open_record() is not None:
            raise LedgerStateError(
                f"{self.upstream_id}: cannot open layer {layer} with another open")
        if layer > 0 and layer - 1 not in self.records:
            raise LedgerStateError(
                f"{self.upstream_id}: layer {layer - 1} never ran")
        rec = LayerRecord(layer=layer, remaining_before_fp=self.remaining_fp)
        self.records[layer] = rec
        return rec

    def close_layer(self, layer: int, grants_fp: Mapping[str, int], rounds: int) -> None:
        rec = self.records.get(layer)
        if rec is None or rec.closed:
            raise LedgerStateError(f"{self.upstream_id}: layer {layer} not open")
        total = sum(grants_fp.values())
        if total > rec.remaining_before_fp:
            raise ProtocolError(
                f"{self.upstream_id}: layer {layer} oversold "
                f"({total} > {rec.remaining_before_fp})")
        rec.grants_fp = dict(grants_fp)
        rec.rounds = rounds
        rec.closed = True


def advance_layer(ledger: AuctionLedger) -> int | None:
    """Open the next layer on this ledger; None once all layers ran or the
    upload is exhausted (such an upstream organizes no further auctions)."""
    if ledger.open_record() is not None:
        raise LedgerStateError(
            f"{ledger.upstream_id}: advance requested while a layer is open")
    nxt = max(ledger.records) + 1 if ledger.records else 0
    if nxt > ledger.top_layer or ledger.remaining_fp <= 0:
        return None
    ledger.open_layer(nxt)
    return nxt


@dataclass
class LayerOutcome:
    """Result of one layer phase across all upstreams."""

    layer: int
    rounds: int
    allocations: list[Allocation]
    payments_fp: dict[str, int]


TraceFn = Callable[[dict], None]


def _validate_wire(bidder, bids: Iterable[Bid]) -> None:
    for b in bids:
        if b.downstream_id != bidder.peer_id:
            raise ProtocolError(f"bid signed by {b.downstream_id}, "
                                f"sent by {bidder.peer_id}")
        if b.unit_price > bidder.reference_price:
            raise ProtocolError(
                f"{bidder.peer_id}: price {b.unit_price} above reference "
                f"price {bidder.reference_price}")
        if b.kept_fp != 0:
            raise ProtocolError(f"{bidder.peer_id}: wire bid carries a kept grant")
        if b.upstream_id not in bidder.links:
            raise ProtocolError(
                f"{bidder.peer_id}: bid targets unknown upstream {b.upstream_id}")


def _standing_entries(bidders: Sequence, upstream_id: str) -> list[Bid]:
    entries = []
    for bidder in bidders:
        ln = bidder.links.get(upstream_id)
        if ln is None or (ln.requested_fp == 0 and ln.granted_fp == 0):
            continue
        # A request below the current grant is a release: only the requested
        # part stays protected, the rest returns to the pool on this clear.
        kept = min(ln.granted_fp, ln.requested_fp)
        entries.append(Bid(downstream_id=bidder.peer_id, layer=bidder.layer,
                           quantity_fp=ln.requested_fp - kept,
                           unit_price=ln.price, upstream_id=upstream_id,
                           kept_fp=kept))
    return entries


# Safety valve for the quantity-settlement iteration inside one price round;
# this is bookkeeping depth, not auction rounds, so the limit is generous.
SETTLE_STEP_LIMIT = 300


def run_auction_rounds(supply_fp: Mapping[str, int], bidders: Sequence, *,
                       link_caps_fp: Mapping[str, Mapping[str, int]] | None = None,
                       max_rounds: int, trace: TraceFn | None = None,
                       label: str = "",
                       reclear_on_decrease: bool = False) -> tuple[int, dict[str, int]]:
    """Drive bid/grant rounds to a fixed point over several upstreams.

    supply_fp maps upstream id to the bandwidth on sale; bidders expose
    initial_bids / revise_bids / escalate and per-link standing state.

    A round is one price step of the ascending auction: quantities settle
    at frozen prices (asks re-spread after displacement or sold-out-chasing,
    iterated until no grant moves), then every still-short bidder raises its
    prices in lock-step.  The boundary notice tells each bidder how much
    bandwidth others hold at prices up to its own on every link, so bidders
    escalate only where a higher price can actually displace someone.
    Once escalation goes quiet, a single settlement pass lets every granted
    link discount to the best price anyone else still has an unfilled ask
    standing at (equal-priced grants are protected, so that level is safe);
    prices escalated past what the final book supports are shed, and the
    extra re-clear confirms no grant moved.  Prices otherwise only rise and
    are capped by the reference price, so the number of rounds is bounded by
    the largest reference price plus the settlement pass, regardless of how
    long displacement ripples take to settle inside a round.

    Only upstreams whose standing requests changed are re-cleared within the
    settlement iteration.  A revision that merely withdraws an unfilled ask
    does not force a re-clear: the ask went unfilled because the price tier
    was sold out, so removing it cannot change anyone's grant.  That shortcut
    is unsound when per-link caps couple entries (a withdrawal lifts the cap
    for the peer's other layers), so combined-auction callers set
    reclear_on_decrease.

    Returns the round count and per-upstream clearing-pass counts; final
    grants live in the bidder states.
    """
    order = sorted(supply_fp)
    bidder_list = sorted(bidders, key=lambda b: (b.peer_id, b.layer))
    by_upstream: dict[str, list] = {j: [] for j in order}
    for bidder in bidder_list:
        for j in bidder.links:
            if j in by_upstream:
                by_upstream[j].append(bidder)

    def mark_dirty(bidder, before, dirty: set[str]) -> None:
        for j, ln in bidder.links.items():
            if j not in by_upstream:
                continue
            prev_req, prev_price = before[j]
            if ln.price != prev_price or ln.requested_fp > prev_req:
                dirty.add(j)
            elif ln.requested_fp < prev_req and (
                    reclear_on_decrease or ln.requested_fp < ln.granted_fp):
                # Cutting a request below the grant releases held bandwidth,
                # which must go back through a clear; dropping only unfilled
                # ask volume is the shortcut case documented above.
                dirty.add(j)

    dirty: set[str] = set()
    for bidder in bidder_list:
        wire = bidder.initial_bids()
        _validate_wire(bidder, wire)
        dirty.update(b.upstream_id for b in wire if b.upstream_id in by_upstream)

    rounds = 0
    passes = {j: 0 for j in order}
    settled = False
    while dirty:
        if rounds >= max_rounds:
            raise ConvergenceError(
                f"{label or 'auction'} still moving after {rounds} rounds; "
                f"unsettled upstreams: {sorted(dirty)}")
        rounds += 1
        steps = 0
        while dirty:
            steps += 1
            if steps > SETTLE_STEP_LIMIT:
                raise ConvergenceError(
                    f"{label or 'auction'} round {rounds}: settlement still "
                    f"moving after {steps - 1} steps")
            notes: dict[tuple[str, int], list[Allocation]] = {}
            leftovers: dict[str, int] = {}
            for j in sorted(dirty):
                entries = _standing_entries(by_upstream[j], j)
                caps = link_caps_fp.get(j) if link_caps_fp else None
                allocs = allocate_round(supply_fp[j], entries, link_caps_fp=caps)
                passes[j] += 1
                leftovers[j] = supply_fp[j] - sum(a.granted_fp for a in allocs)
                for a in allocs:
                    notes.setdefault((a.downstream_id, a.layer), []).append(a)
                if trace is not None:
                    trace({"label": label, "round": rounds, "step": steps,
                           "upstream": j,
                           "entries": [{"down": e.downstream_id, "layer": e.layer,
                                        "price": e.unit_price, "kept_fp": e.kept_fp,
                                        "ask_fp": e.quantity_fp} for e in entries],
                           "grants": [{"down": a.downstream_id, "layer": a.layer,
                                       "granted_fp": a.granted_fp,
                                       "price": a.unit_price} for a in allocs]})
            dirty = set()
            for bidder in bidder_list:
                grants = notes.get((bidder.peer_id, bidder.layer))
                if not grants:
                    continue
                before = {j: (ln.requested_fp, ln.price)
                          for j, ln in bidder.links.items()}
                remaining = {a.upstream_id: leftovers[a.upstream_id]
                             for a in grants}
                wire = bidder.revise_bids(grants, remaining, allow_bump=False,
                                          market_round=rounds)
                if wire is None:
                    continue
                _validate_wire(bidder, wire)
                mark_dirty(bidder, before, dirty)
        if not settled:
            book: dict[str, dict[int, int]] = {j: {} for j in order}
            for bidder in bidder_list:
                for j, ln in bidder.links.items():
                    if j in book and ln.granted_fp > 0:
                        tier = book[j]
                        tier[ln.price] = tier.get(ln.price, 0) + ln.granted_fp
            for bidder in bidder_list:
                displaceable = {}
                for j, ln in bidder.links.items():
                    if j in book:
                        held = sum(q for p, q in book[j].items() if p <= ln.price)
                        displaceable[j] = held - ln.granted_fp
                before = {j: (ln.requested_fp, ln.price)
                          for j, ln in bidder.links.items()}
                wire = bidder.escalate(rounds + 1, displaceable)
                if wire is None:
                    continue
                _validate_wire(bidder, wire)
                mark_dirty(bidder, before, dirty)
        if not dirty and not settled:
            # Closing act: once escalation goes quiet the auction settles for
            # good.  Discounted prices and rebalanced splits re-clear at
            # frozen prices only — re-opening escalation here would let the
            # discount's cheaper book re-arm price bumps and break the round
            # bound.
            settled = True
            asks: dict[str, dict[int, int]] = {j: {} for j in order}
            for bidder in bidder_list:
                for j, ln in bidder.links.items():
                    if j in asks and ln.requested_fp > ln.granted_fp:
                        tier = asks[j]
                        tier[ln.price] = tier.get(ln.price, 0) + 1
            for bidder in bidder_list:
                support: dict[str, int] = {}
                for j, ln in bidder.links.items():
                    tiers = asks.get(j)
                    if not tiers:
                        continue
                    own = ln.price if ln.requested_fp > ln.granted_fp else None
                    best = 0
                    for p, n in tiers.items():
                        if p == own and n == 1:
                            continue
                        if p > best:
                            best = p
                    support[j] = best
                before = {j: (ln.requested_fp, ln.price)
                          for j, ln in bidder.links.items()}
                if bidder.discount_prices(support):
                    mark_dirty(bidder, before, dirty)
            held: dict[str, dict[int, int]] = {j: {} for j in order}
            leftover_fp = dict(supply_fp)
            for bidder in bidder_list:
                for j, ln in bidder.links.items():
                    if j in held and ln.granted_fp > 0:
                        tier = held[j]
                        tier[ln.price] = tier.get(ln.price, 0) + ln.granted_fp
                        leftover_fp[j] -= ln.granted_fp
            for bidder in bidder_list:
                claimable = {}
                for j, ln in bidder.links.items():
                    if j in held:
                        below = sum(q for p, q in held[j].items()
                                    if p < ln.price)
                        claimable[j] = leftover_fp[j] + below
                before = {j: (ln.requested_fp, ln.price)
                          for j, ln in bidder.links.items()}
                wire = bidder.settle_down(claimable)
                if wire is None:
                    continue
                _validate_wire(bidder, wire)
                mark_dirty(bidder, before, dirty)
    return rounds, passes


def run_layer_auction(overlay, ledgers: Mapping[str, AuctionLedger], layer: int,
                      bidders: Sequence, *, max_rounds: int | None = None,
                      trace: TraceFn | None = None) -> LayerOutcome:
    """Run layer k's auctions on every upstream holding an open layer-k
    record, close the records, and settle payments at the final prices."""
    records: dict[str, LayerRecord] = {}
    for j in sorted(ledgers):
        rec = ledgers[j].records.get(layer)
        if rec is not None and not rec.closed:
            records[j] = rec
    for bidder in bidders:
        if bidder.layer != layer:
            raise ProtocolError(
                f"{bidder.peer_id} negotiates layer {bidder.layer}, phase is {layer}")
    p_max = max((b.reference_price for b in bidders), default=0)
    cap = max_rounds if max_rounds is not None else p_max + 2
    supply = {j: rec.remaining_before_fp for j, rec in records.items()}
    rounds, passes = run_auction_rounds(supply, bidders, max_rounds=cap,
                                        trace=trace, label=f"layer {layer}")
    allocations: list[Allocation] = []
    payments: dict[str, int] = {}
    for bidder in sorted(bidders, key=lambda b: b.peer_id):
        pay = 0
        for j in sorted(bidder.links):
            ln = bidder.links[j]
            if ln.granted_fp > 0:
                allocations.append(Allocation(
                    downstream_id=bidder.peer_id, upstream_id=j, layer=layer,
                    granted_fp=ln.granted_fp, unit_price=ln.price))
                pay += ln.granted_fp * ln.price
        payments[bidder.peer_id] = pay
        if pay > bidder.budget_fp:
            raise ProtocolError(
                f"{bidder.peer_id}: layer {layer} payment {pay} exceeds "
                f"budget {bidder.budget_fp}")
    for j, rec in records.items():
        grants: dict[str, int] = {}
        for bidder in sorted(bidders, key=lambda b: b.peer_id):
            ln = bidder.links.get(j)
            if ln is not None and ln.granted_fp > 0:
                grants[bidder.peer_id] = ln.granted_fp
        ledgers[j].close_layer(layer, grants, passes[j])
    return LayerOutcome(layer=layer, rounds=rounds, allocations=allocations,
                        payments_fp=payments)
