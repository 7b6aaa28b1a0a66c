"""Scenario configuration: JSON schema, paper-default values, sweeps.

An empty config file means "the default scenario": a 500-downstream overlay
streaming six layers (200 kbps base plus five 100 kbps enhancements), upload
capacities uniform in [256, 2048] kbps, download in [256, 1024] kbps, and a
10/30/60 split over three priority classes with reference prices 4/2/1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from layercast.overlay import LayerSpec, PriorityClass


class ConfigError(ValueError):
    """A config value violates the schema; the message names the key."""


@dataclass(frozen=True)
class ClassConfig:
    id: int
    reference_price: int
    share: float


DEFAULT_LAYER_RATES = (200.0, 100.0, 100.0, 100.0, 100.0, 100.0)
DEFAULT_CLASSES = (
    ClassConfig(id=1, reference_price=4, share=0.10),
    ClassConfig(id=2, reference_price=2, share=0.30),
    ClassConfig(id=3, reference_price=1, share=0.60),
)


@dataclass(frozen=True)
class ScenarioConfig:
    n_upstream: int = 280
    n_downstream: int = 500
    degree: int = 4
    upload_range: tuple[float, float] = (256.0, 2048.0)
    download_range: tuple[float, float] = (256.0, 1024.0)
    link_range: tuple[float, float] = (256.0, 2048.0)
    layer_count: int = 6
    layer_rates: tuple[float, ...] = DEFAULT_LAYER_RATES
    classes: tuple[ClassConfig, ...] = DEFAULT_CLASSES

    def layer_spec(self) -> LayerSpec:
        return LayerSpec(count=self.layer_count, rates=self.layer_rates)

    def priority_classes(self) -> tuple[PriorityClass, ...]:
        return tuple(
            PriorityClass(id=c.id, reference_price=c.reference_price,
                          population_share=c.share)
            for c in self.classes
        )

    def validate(self) -> None:
        if self.n_upstream < 1:
            raise ConfigError("n_upstream: must be at least 1")
        if self.n_downstream < 0:
            raise ConfigError("n_downstream: must be non-negative")
        if self.degree < 1:
            raise ConfigError("degree: must be at least 1")
        if self.degree > self.n_upstream:
            raise ConfigError("degree: cannot exceed n_upstream")
        for key, rng in (("upload_range", self.upload_range),
                         ("download_range", self.download_range),
                         ("link_range", self.link_range)):
            lo, hi = rng
            if not (0 < lo <= hi):
                raise ConfigError(f"{key}: need 0 < low <= high, got {rng}")
        if self.layer_count < 1:
            raise ConfigError("layer_count: must be at least 1")
        if len(self.layer_rates) != self.layer_count:
            raise ConfigError("layer_rates: length must equal layer_count")
        if any(r <= 0 for r in self.layer_rates):
            raise ConfigError("layer_rates: every rate must be positive")
        if not self.classes:
            raise ConfigError("classes: at least one class required")
        ids = [c.id for c in self.classes]
        if sorted(ids) != ids or len(set(ids)) != len(ids):
            raise ConfigError("classes: ids must be unique and ascending")
        prices = [c.reference_price for c in self.classes]
        if any(p < 1 or int(p) != p for p in prices):
            raise ConfigError("classes: reference_price must be a positive integer")
        if any(a <= b for a, b in zip(prices, prices[1:])):
            raise ConfigError(
                "classes: reference_price must strictly decrease with id")
        if any(c.share < 0 for c in self.classes):
            raise ConfigError("classes: shares must be non-negative")
        total = sum(c.share for c in self.classes)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"classes: shares sum to {total}, expected 1")

    # -- sweep axes --------------------------------------------------------

    def with_upload_mid(self, mid: float) -> "ScenarioConfig":
        """Re-center the upload range on a new mean, preserving the relative
        half-width of the configured range (so the default [256, 2048]
        becomes [mid*(1-s), mid*(1+s)] with s = 1792/2304)."""
        lo, hi = self.upload_range
        s = (hi - lo) / (hi + lo)
        return replace(self, upload_range=(round(mid * (1 - s), 4),
                                           round(mid * (1 + s), 4)))

    def with_q1_share(self, share: float) -> "ScenarioConfig":
        """Grow the top class at the expense of the bottom one, keeping the
        middle class and the total fixed."""
        if len(self.classes) != 3:
            raise ConfigError("q1_share sweep needs exactly three classes")
        c1, c2, c3 = self.classes
        rest = 1.0 - share - c2.share
        if rest < -1e-9:
            raise ConfigError("q1_share: leaves a negative share for the last class")
        return replace(self, classes=(
            replace(c1, share=round(share, 9)),
            c2,
            replace(c3, share=round(max(rest, 0.0), 9)),
        ))

    def with_size(self, n_downstream: int) -> "ScenarioConfig":
        """Scale the network, keeping the upstream:downstream ratio."""
        ratio = self.n_upstream / self.n_downstream
        n_up = max(self.degree, int(round(n_downstream * ratio)))
        return replace(self, n_downstream=n_downstream, n_upstream=n_up)

    def apply_sweep(self, key: str, value: float) -> "ScenarioConfig":
        if key == "upload_mid":
            return self.with_upload_mid(value)
        if key == "q1_share":
            return self.with_q1_share(value)
        if key == "n_downstream":
            return self.with_size(int(value))
        if key == "n_upstream":
            return replace(self, n_upstream=int(value))
        if key == "degree":
            return replace(self, degree=int(value))
        raise ConfigError(f"sweep: unsupported key {key!r}")

    def to_dict(self) -> dict:
        return {
            "n_upstream": self.n_upstream,
            "n_downstream": self.n_downstream,
            "degree": self.degree,
            "upload_range": list(self.upload_range),
            "download_range": list(self.download_range),
            "link_range": list(self.link_range),
            "layers": {"count": self.layer_count, "rates": list(self.layer_rates)},
            "classes": [
                {"id": c.id, "reference_price": c.reference_price, "share": c.share}
                for c in self.classes
            ],
        }


_RANGE_KEYS = {"upload_range", "download_range", "link_range"}


def config_from_dict(data: dict) -> ScenarioConfig:
    """Build a config from parsed JSON; unknown keys are rejected so typos
    never silently fall back to defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    known = {"n_upstream", "n_downstream", "degree", "layers", "classes"} | _RANGE_KEYS
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")

    kwargs: dict = {}
    for key in ("n_upstream", "n_downstream", "degree"):
        if key in data:
            v = data[key]
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{key}: must be an integer")
            kwargs[key] = v
    for key in _RANGE_KEYS:
        if key in data:
            v = data[key]
            if (not isinstance(v, (list, tuple)) or len(v) != 2
                    or not all(isinstance(x, (int, float)) for x in v)):
                raise ConfigError(f"{key}: must be a [low, high] pair")
            kwargs[key] = (float(v[0]), float(v[1]))
    if "layers" in data:
        v = data["layers"]
        if not isinstance(v, dict) or set(v) - {"count", "rates"}:
            raise ConfigError("layers: must be an object with count and rates")
        rates = v.get("rates", list(DEFAULT_LAYER_RATES))
        count = v.get("count", len(rates))
        kwargs["layer_count"] = count
        kwargs["layer_rates"] = tuple(float(r) for r in rates)
    if "classes" in data:
        v = data["classes"]
        if not isinstance(v, list) or not v:
            raise ConfigError("classes: must be a non-empty list")
        parsed = []
        for i, c in enumerate(v):
            if not isinstance(c, dict) or set(c) - {"id", "reference_price", "share"}:
                raise ConfigError(f"classes[{i}]: needs id, reference_price, share")
            try:
                parsed.append(ClassConfig(id=int(c["id"]),
                                          reference_price=int(c["reference_price"]),
                                          share=float(c["share"])))
            except KeyError as missing:
                raise ConfigError(f"classes[{i}]: missing {missing}") from None
        kwargs["classes"] = tuple(parsed)

    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg


def parse_config(path: str | Path) -> ScenarioConfig:
    """Load a JSON config file; {} yields the full default scenario."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config: invalid JSON ({err})") from None
    return config_from_dict(data)


def parse_seed_spec(spec: str) -> list[int]:
    """"7" -> [7]; "1..20" -> [1, ..., 20]."""
    spec = spec.strip()
    if ".." in spec:
        a, b = spec.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ConfigError(f"seeds: empty range {spec!r}")
        return list(range(lo, hi + 1))
    return [int(spec)]


def parse_sweep_spec(spec: str) -> tuple[str, list[float]]:
    """"upload_mid=600..1400:200" -> ("upload_mid", [600, 800, ..., 1400])."""
    if "=" not in spec:
        raise ConfigError("sweep: expected KEY=A..B:STEP")
    key, rhs = spec.split("=", 1)
    if ".." not in rhs or ":" not in rhs:
        raise ConfigError("sweep: expected KEY=A..B:STEP")
    span, step_s = rhs.rsplit(":", 1)
    a_s, b_s = span.split("..", 1)
    a, b, step = float(a_s), float(b_s), float(step_s)
    if step <= 0 or b < a:
        raise ConfigError(f"sweep: bad range {rhs!r}")
    values = []
    v = a
    while v <= b + 1e-9:
        values.append(round(v, 9))
        v += step
    return key.strip(), values
