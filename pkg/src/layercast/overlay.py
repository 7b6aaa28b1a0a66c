"""Overlay model: layered stream, priority classes, peers and links.

The overlay is a bipartite graph between upstream peers (sellers of upload
bandwidth) and downstream peers (buyers).  Generation is fully deterministic
for a given seed; topology, capacities and class assignment each consume an
independent RNG stream so that changing one knob never perturbs the draws of
another.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from layercast.quantize import from_fp, to_fp


@dataclass(frozen=True)
class LayerSpec:
    """Cumulative-layer description of the stream.

    rates[0] is the base layer bitrate, rates[k] the k-th enhancement.
    Decoding layer k requires every layer below it.
    """

    count: int
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.count < 1 or len(self.rates) != self.count:
            raise ValueError("layer count must match the number of rates")
        if any(r <= 0 for r in self.rates):
            raise ValueError("layer rates must be positive")

    def cumulative(self, k: int) -> float:
        """Bandwidth needed to decode layers 0..k in full."""
        return float(sum(self.rates[: k + 1]))

    @property
    def top_layer(self) -> int:
        return self.count - 1


@dataclass(frozen=True)
class PriorityClass:
    """A service class; the reference price caps how far its members may
    escalate their unit price, which is also what sizes their layer budgets."""

    id: int
    reference_price: int
    population_share: float


@dataclass(frozen=True)
class Peer:
    id: str
    kind: str  # "upstream" | "downstream"
    upload: float | None = None
    download: float | None = None
    class_id: int | None = None
    subscribed_level: int | None = None


@dataclass(frozen=True)
class Link:
    """Directed edge upstream -> downstream with its own available bandwidth.

    allocated tracks cumulative grants across completed layers; generation
    always leaves it at zero, simulation keeps its own tally so a generated
    overlay can be shared read-only between runs.
    """

    downstream_id: str
    upstream_id: str
    available_bandwidth: float
    allocated: float = 0.0


@dataclass
class Overlay:
    peers: list[Peer]
    links: list[Link]
    layer_spec: LayerSpec
    classes: tuple[PriorityClass, ...]
    rng_seed: int
    _by_id: dict[str, Peer] = field(default_factory=dict, repr=False)
    _links_by_down: dict[str, list[Link]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {p.id: p for p in self.peers}
        self._links_by_down = {}
        for ln in self.links:
            self._links_by_down.setdefault(ln.downstream_id, []).append(ln)

    def peer(self, peer_id: str) -> Peer:
        return self._by_id[peer_id]

    def upstreams(self) -> list[Peer]:
        return [p for p in self.peers if p.kind == "upstream"]

    def downstreams(self) -> list[Peer]:
        return [p for p in self.peers if p.kind == "downstream"]

    def links_of(self, downstream_id: str) -> list[Link]:
        return self._links_by_down.get(downstream_id, [])

    def class_of(self, peer: Peer) -> PriorityClass:
        for c in self.classes:
            if c.id == peer.class_id:
                return c
        raise KeyError(f"peer {peer.id} has unknown class {peer.class_id}")

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "layer_spec": {"count": self.layer_spec.count,
                           "rates": list(self.layer_spec.rates)},
            "classes": [
                {"id": c.id, "reference_price": c.reference_price,
                 "population_share": c.population_share}
                for c in self.classes
            ],
            "peers": [
                {k: v for k, v in (
                    ("id", p.id), ("kind", p.kind), ("upload", p.upload),
                    ("download", p.download), ("class_id", p.class_id),
                    ("subscribed_level", p.subscribed_level),
                ) if v is not None}
                for p in self.peers
            ],
            "links": [
                {"downstream": ln.downstream_id, "upstream": ln.upstream_id,
                 "available_bandwidth": ln.available_bandwidth,
                 "allocated": ln.allocated}
                for ln in self.links
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "Overlay":
        spec = LayerSpec(count=data["layer_spec"]["count"],
                         rates=tuple(data["layer_spec"]["rates"]))
        classes = tuple(
            PriorityClass(id=c["id"], reference_price=c["reference_price"],
                          population_share=c["population_share"])
            for c in data["classes"]
        )
        peers = [
            Peer(id=p["id"], kind=p["kind"], upload=p.get("upload"),
                 download=p.get("download"), class_id=p.get("class_id"),
                 subscribed_level=p.get("subscribed_level"))
            for p in data["peers"]
        ]
        links = [
            Link(downstream_id=ln["downstream"], upstream_id=ln["upstream"],
                 available_bandwidth=ln["available_bandwidth"],
                 allocated=ln.get("allocated", 0.0))
            for ln in data["links"]
        ]
        return cls(peers=peers, links=links, layer_spec=spec, classes=classes,
                   rng_seed=data["rng_seed"])

    @classmethod
    def from_json(cls, text: str) -> "Overlay":
        return cls.from_json_dict(json.loads(text))


def subscribe_quality(download: float, layers: LayerSpec) -> int:
    """Highest layer whose cumulative rate fits in the download capacity.

    Peers that cannot even afford the base layer still subscribe at level 0
    and take whatever fraction of it they win (best-effort base).
    """
    level = 0
    total = 0.0
    for k, rate in enumerate(layers.rates):
        total += rate
        if total <= download:
            level = k
        else:
            break
    return level


def _round_tenth(v: float) -> float:
    return from_fp(to_fp(v))


def _class_quotas(classes: Sequence[PriorityClass], n: int) -> list[int]:
    """Largest-remainder apportionment of n peers over the class shares."""
    raw = [c.population_share * n for c in classes]
    quotas = [int(r) for r in raw]
    leftover = n - sum(quotas)
    order = sorted(range(len(classes)), key=lambda i: (quotas[i] - raw[i], i))
    for i in order[:leftover]:
        quotas[i] += 1
    return quotas


def generate_overlay(config, seed: int) -> Overlay:
    """Build a seeded random overlay from a ScenarioConfig.

    Independent streams: topology (upstream choice per downstream), upload
    draws, download draws, link bandwidth draws, class assignment.
    """
    from layercast.config import ConfigError  # cycle-free: config imports nothing from here at import time

    config.validate()
    if config.degree > config.n_upstream:
        raise ConfigError("degree: cannot exceed n_upstream")

    ss = np.random.SeedSequence(seed)
    topo_ss, up_ss, down_ss, link_ss, class_ss = ss.spawn(5)
    rng_topo = np.random.default_rng(topo_ss)
    rng_up = np.random.default_rng(up_ss)
    rng_down = np.random.default_rng(down_ss)
    rng_link = np.random.default_rng(link_ss)
    rng_class = np.random.default_rng(class_ss)

    layers = config.layer_spec()
    classes = config.priority_classes()

    uploads = rng_up.uniform(*config.upload_range, size=config.n_upstream)
    downloads = rng_down.uniform(*config.download_range, size=config.n_downstream)

    quotas = _class_quotas(classes, config.n_downstream)
    class_ids: list[int] = []
    for c, q in zip(classes, quotas):
        class_ids.extend([c.id] * q)
    class_ids = [class_ids[i] for i in rng_class.permutation(config.n_downstream)]

    peers: list[Peer] = []
    for j in range(config.n_upstream):
        peers.append(Peer(id=f"u{j}", kind="upstream",
                          upload=_round_tenth(float(uploads[j]))))
    for i in range(config.n_downstream):
        down = _round_tenth(float(downloads[i]))
        peers.append(Peer(
            id=f"d{i}", kind="downstream", download=down,
            class_id=class_ids[i],
            subscribed_level=subscribe_quality(down, layers),
        ))

    links: list[Link] = []
    lo, hi = config.link_range
    for i in range(config.n_downstream):
        chosen = rng_topo.choice(config.n_upstream, size=config.degree,
                                 replace=False)
        draws = rng_link.uniform(lo, hi, size=config.degree)
        down_peer = peers[config.n_upstream + i]
        for j, draw in zip(sorted(int(j) for j in chosen), draws):
            cap = min(float(draw), float(uploads[j]), down_peer.download)
            links.append(Link(
                downstream_id=down_peer.id, upstream_id=f"u{j}",
                available_bandwidth=_round_tenth(cap),
            ))

    return Overlay(peers=peers, links=links, layer_spec=layers,
                   classes=classes, rng_seed=seed)


def validate_overlay(overlay: Overlay) -> list[str]:
    """Structural invariant check; returns one message per violation."""
    problems: list[str] = []
    ids = set()
    for p in overlay.peers:
        if p.id in ids:
            problems.append(f"duplicate peer id {p.id}")
        ids.add(p.id)
        if p.kind == "upstream":
            if p.upload is None or p.upload <= 0:
                problems.append(f"upstream {p.id}: upload must be positive")
        elif p.kind == "downstream":
            if p.download is None or p.download <= 0:
                problems.append(f"downstream {p.id}: download must be positive")
            if p.class_id is None or all(c.id != p.class_id for c in overlay.classes):
                problems.append(f"downstream {p.id}: unknown class {p.class_id}")
            if (p.subscribed_level is None
                    or not 0 <= p.subscribed_level <= overlay.layer_spec.top_layer):
                problems.append(f"downstream {p.id}: subscribed_level out of range")
        else:
            problems.append(f"peer {p.id}: unknown kind {p.kind!r}")

    shares = sum(c.population_share for c in overlay.classes)
    if abs(shares - 1.0) > 1e-9:
        problems.append(f"class shares sum to {shares!r}, expected 1")
    prices = [c.reference_price for c in sorted(overlay.classes, key=lambda c: c.id)]
    if any(p <= 0 or int(p) != p for p in prices):
        problems.append("reference prices must be positive integers")
    if any(a <= b for a, b in zip(prices, prices[1:])):
        problems.append("reference prices must strictly decrease with class id")

    linked: set[str] = set()
    seen_pairs: set[tuple[str, str]] = set()
    for ln in overlay.links:
        pair = (ln.downstream_id, ln.upstream_id)
        if pair in seen_pairs:
            problems.append(f"duplicate link {pair}")
        seen_pairs.add(pair)
        down = overlay._by_id.get(ln.downstream_id)
        up = overlay._by_id.get(ln.upstream_id)
        if down is None or down.kind != "downstream":
            problems.append(f"link {pair}: bad downstream endpoint")
        if up is None or up.kind != "upstream":
            problems.append(f"link {pair}: bad upstream endpoint")
        if ln.available_bandwidth <= 0:
            problems.append(f"link {pair}: available bandwidth must be positive")
        if not 0 <= ln.allocated < ln.available_bandwidth:
            problems.append(f"link {pair}: allocated outside [0, available)")
        linked.add(ln.downstream_id)

    for p in overlay.peers:
        if p.kind == "downstream" and p.id not in linked:
            problems.append(f"downstream {p.id} has no upstream link")
    return problems
