"""Per-link streaming-cost curves.

A link with available bandwidth x carrying b kbps costs E(b) = b / (x - b):
negligible while the link is lightly loaded, diverging as b approaches x.
The bidding strategy only ever consumes the curve through three operations
(cost, marginal cost, inverse of the marginal), so alternative cost families
can be plugged in behind the same interface.  Only the utilization family
ships.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

# Fraction of capacity kept free below the pole.  Allocations are clamped to
# x * (1 - LINK_EPSILON) so E and E' stay finite.
LINK_EPSILON = 1e-6


class CostDomainError(ValueError):
    """Requested load at or beyond the curve's capacity."""


@dataclass(frozen=True)
class CostFamily:
    """A convex cost family expressed through the three closed forms the
    water-filling solver needs.

    cost(x, b)        -> E(b)
    marginal(x, b)    -> E'(b)
    inverse(x, m)     -> b such that E'(b) = m   (m > E'(0))
    curvature(x, b)   -> E''(b), used to accelerate the water-level search
    """

    name: str
    cost: Callable[[float, float], float]
    marginal: Callable[[float, float], float]
    inverse: Callable[[float, float], float]
    curvature: Callable[[float, float], float]


def _util_cost(x: float, b: float) -> float:
    return b / (x - b)


def _util_marginal(x: float, b: float) -> float:
    d = x - b
    return x / (d * d)


def _util_inverse(x: float, m: float) -> float:
    # solve x / (x - b)^2 = m for b in [0, x)
    return x - math.sqrt(x / m)


def _util_curvature(x: float, b: float) -> float:
    d = x - b
    return 2.0 * x / (d * d * d)


FAMILIES: dict[str, CostFamily] = {
    "utilization": CostFamily(
        name="utilization",
        cost=_util_cost,
        marginal=_util_marginal,
        inverse=_util_inverse,
        curvature=_util_curvature,
    ),
}


@dataclass(frozen=True)
class CostCurve:
    """Cost curve of one link at one layer phase.

    capacity is the remaining headroom of the link when the phase opens:
    the original available bandwidth minus whatever lower layers already
    claimed on it.
    """

    capacity: float
    kind: str = "utilization"

    def __post_init__(self) -> None:
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown cost family {self.kind!r}")
        if not (self.capacity > 0.0):
            raise ValueError("cost curve needs positive capacity")

    @property
    def family(self) -> CostFamily:
        return FAMILIES[self.kind]

    @property
    def max_allocation(self) -> float:
        """Largest load the curve accepts (capacity minus the pole guard)."""
        return self.capacity * (1.0 - LINK_EPSILON)


def _check_domain(curve: CostCurve, b: float) -> None:
    if b < 0.0:
        raise CostDomainError(f"negative bandwidth {b!r}")
    if b >= curve.capacity:
        raise CostDomainError(
            f"load {b!r} at or beyond capacity {curve.capacity!r}"
        )


def streaming_cost(curve: CostCurve, b: float) -> float:
    """E(b) for the curve; strictly convex and increasing on [0, capacity)."""
    _check_domain(curve, b)
    return curve.family.cost(curve.capacity, b)


def marginal_streaming_cost(curve: CostCurve, b: float) -> float:
    """E'(b); for the utilization family x / (x - b)^2, so E'(0) = 1/x."""
    _check_domain(curve, b)
    return curve.family.marginal(curve.capacity, b)


def curvature(curve: CostCurve, b: float) -> float:
    """E''(b) > 0 on the open domain."""
    _check_domain(curve, b)
    return curve.family.curvature(curve.capacity, b)


def inverse_marginal(curve: CostCurve, price: float, level: float) -> float:
    """Bandwidth at which unit price plus marginal cost reaches the water
    level: the b solving price + E'(b) = level.

    Returns 0 when the level does not clear the link's entry threshold
    price + E'(0), and clamps to max_allocation above the pole guard.
    """
    if level <= 0.0:
        raise ValueError("water level must be positive")
    if price < 0.0:
        raise ValueError("price must be non-negative")
    x = curve.capacity
    if level <= price + curve.family.marginal(x, 0.0):
        return 0.0
    b = curve.family.inverse(x, level - price)
    if b < 0.0:
        return 0.0
    return min(b, curve.max_allocation)
