"""Fixed-point bandwidth arithmetic.

All bandwidth quantities inside the auction machinery are integers counting
0.1 kbps quanta.  Integer arithmetic is what makes the conservation
guarantees exact: granted amounts sum to exactly what an upstream offered,
never to within a float epsilon of it.
"""

from __future__ import annotations

QUANTUM_KBPS = 0.1
_SCALE = 10


def to_fp(kbps: float) -> int:
    """Round a kbps value to the nearest 0.1 kbps quantum."""
    return int(round(kbps * _SCALE))


def to_fp_floor(kbps: float) -> int:
    """Quantize a kbps value downward (used for capacity ceilings)."""
    return int(kbps * _SCALE)


def from_fp(fp: int) -> float:
    """Quanta back to kbps."""
    return fp / _SCALE


def quantize_shares(values: list[float], total_fp: int, caps_fp: list[int]) -> list[int]:
    """Quantize fractional kbps shares so they sum to exactly
    min(total_fp, sum(caps_fp)) without exceeding any per-entry cap.

    Floors every share to a quantum, then hands out the remaining quanta by
    largest fractional part (ties broken by position, so the result is
    deterministic for a fixed input order).
    """
    n = len(values)
    if n == 0 or total_fp <= 0:
        return [0] * n
    target = min(total_fp, sum(caps_fp))
    if target <= 0:
        return [0] * n
    raw = [min(max(v, 0.0) * _SCALE, float(c)) for v, c in zip(values, caps_fp)]
    floors = [int(r) for r in raw]
    overshoot = sum(floors) - target
    if overshoot > 0:
        # float noise pushed us past the target; trim from the largest shares
        for i in sorted(range(n), key=lambda i: (-floors[i], i)):
            take = min(overshoot, floors[i])
            floors[i] -= take
            overshoot -= take
            if overshoot == 0:
                break
        return floors
    leftover = target - sum(floors)
    if leftover > 0:
        order = sorted(range(n), key=lambda i: (floors[i] - raw[i], i))
        progress = True
        while leftover > 0 and progress:
            progress = False
            for i in order:
                if leftover == 0:
                    break
                if floors[i] < caps_fp[i]:
                    floors[i] += 1
                    leftover -= 1
                    progress = True
    return floors
