"""Evaluation metrics computed from a finished scenario run.

All three quantities look only at the final grants: what fraction of each
layer's rate reached its subscribers, how much bandwidth went to layers that
cannot be decoded because a lower layer is incomplete, and how expensive the
used links are at their final aggregate load.  Layer completeness is tested
on exact fixed-point quantities, so "incomplete" means short by at least one
0.1 kbps quantum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from layercast.cost import CostCurve, streaming_cost
from layercast.quantize import from_fp, to_fp
from layercast.simulation import ScenarioResult, convergence_stats


@dataclass
class MetricsReport:
    mode: str
    delivery_ratios: list[float | None]
    useless_chunk_ratio: float
    cost_overall: float | None
    cost_by_class: dict[int, float | None]
    class_counts: dict[int, int]
    convergence: dict

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "delivery_ratios": self.delivery_ratios,
            "useless_chunk_ratio": self.useless_chunk_ratio,
            "cost_overall": self.cost_overall,
            "cost_by_class": {str(c): v for c, v in sorted(self.cost_by_class.items())},
            "class_counts": {str(c): v for c, v in sorted(self.class_counts.items())},
            "convergence": self.convergence,
        }


def _layer_totals_fp(result: ScenarioResult) -> dict[tuple[str, int], int]:
    totals: dict[tuple[str, int], int] = {}
    for g in result.grants:
        key = (g.downstream_id, g.layer)
        totals[key] = totals.get(key, 0) + g.granted_fp
    return totals


def delivery_ratio(result: ScenarioResult, layer: int) -> float | None:
    """Mean delivered fraction of layer's rate over its subscribers; None
    when nobody subscribes to the layer."""
    rate_fp = to_fp(result.overlay.layer_spec.rates[layer])
    totals = _layer_totals_fp(result)
    fractions = []
    for peer in result.overlay.downstreams():
        if peer.subscribed_level < layer:
            continue
        got = totals.get((peer.id, layer), 0)
        fractions.append(min(1.0, got / rate_fp))
    if not fractions:
        return None
    return math.fsum(fractions) / len(fractions)


def useless_chunk_ratio(result: ScenarioResult) -> float:
    """Fraction of all granted bandwidth sitting in enhancement layers whose
    prerequisite layers are not fully delivered (exact full-rate test)."""
    spec = result.overlay.layer_spec
    rates_fp = [to_fp(r) for r in spec.rates]
    totals = _layer_totals_fp(result)
    useless = 0
    everything = 0
    by_peer: dict[str, list[int]] = {}
    for (peer_id, layer), got in totals.items():
        by_peer.setdefault(peer_id, [0] * spec.count)[layer] = got
    for got_by_layer in by_peer.values():
        incomplete_below = False
        for layer, got in enumerate(got_by_layer):
            everything += got
            if incomplete_below and layer >= 1:
                useless += got
            if got < rates_fp[layer]:
                incomplete_below = True
    if everything == 0:
        return 0.0
    return useless / everything


def avg_streaming_cost(result: ScenarioResult,
                       class_id: int | None = None) -> float | None:
    """Mean over (filtered) downstream peers of the summed link congestion
    cost at each link's final aggregate load, against the link's original
    capacity; None when the filter matches nobody."""
    link_load = result.link_totals_fp()
    per_peer: list[float] = []
    for peer in result.overlay.downstreams():
        if class_id is not None and peer.class_id != class_id:
            continue
        cost = 0.0
        for link in result.overlay.links_of(peer.id):
            got_fp = link_load.get((peer.id, link.upstream_id), 0)
            if got_fp > 0:
                curve = CostCurve(capacity=link.available_bandwidth)
                cost += streaming_cost(curve, from_fp(got_fp))
        per_peer.append(cost)
    if not per_peer:
        return None
    return math.fsum(per_peer) / len(per_peer)


def build_report(result: ScenarioResult) -> MetricsReport:
    overlay = result.overlay
    counts = {c.id: 0 for c in overlay.classes}
    for peer in overlay.downstreams():
        counts[peer.class_id] += 1
    return MetricsReport(
        mode=result.mode,
        delivery_ratios=[delivery_ratio(result, k)
                         for k in range(overlay.layer_spec.count)],
        useless_chunk_ratio=useless_chunk_ratio(result),
        cost_overall=avg_streaming_cost(result),
        cost_by_class={c.id: avg_streaming_cost(result, c.id)
                       for c in overlay.classes},
        class_counts=counts,
        convergence=convergence_stats(result),
    )
