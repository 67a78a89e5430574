"""Memory-based accumulators blending Monte Carlo estimates with history.

The accumulated value follows the recurrence ``L_t = a_t * L(raw_t) +
(1 - a_t) * L_{t-1}`` with ``a_0 = 1``, so it is always a convex
combination of past raw estimates.  The same recurrence applies
componentwise to gradients with its own coefficient schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CoefficientSchedule",
    "MemoryAccumulator",
    "accumulate_scalar",
    "accumulate_gradient",
    "expanded_weights",
    "default_schedule",
]


@dataclass(frozen=True)
class CoefficientSchedule:
    """Coefficient sequence a_t in (0, 1] with a_0 = 1.

    kinds: ``constant`` (a for t >= 1), ``exponential-decay``
    (exp(-rate*t) + offset, clipped to (0, 1]), or ``table``.
    """

    kind: str = "exponential-decay"
    constant: float = 1.0
    rate: float = 1e-3
    offset: float = 1e-3
    table: tuple = ()

    def __call__(self, t: int) -> float:
        if t == 0:
            return 1.0
        if self.kind == "constant":
            a = self.constant
        elif self.kind == "exponential-decay":
            a = float(np.exp(-self.rate * t) + self.offset)
        elif self.kind == "table":
            a = self.table[t] if t < len(self.table) else self.table[-1]
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < a:
            raise ValueError(f"coefficient at t={t} not positive: {a}")
        return min(a, 1.0)


def default_schedule() -> CoefficientSchedule:
    """exp(-0.001 t) + 0.001, clipped to (0, 1]."""
    return CoefficientSchedule("exponential-decay", rate=1e-3, offset=1e-3)


@dataclass
class MemoryAccumulator:
    """Single-owner recurrence state; one per monitored series."""

    schedule: CoefficientSchedule = field(default_factory=default_schedule)
    value: float | np.ndarray | None = None
    t: int = -1  # steps consumed so far minus one

    def reset(self) -> None:
        self.value = None
        self.t = -1


def accumulate_scalar(acc: MemoryAccumulator, estimate: float) -> float:
    """Feed one raw estimate; returns the updated accumulated value."""
    estimate = float(estimate)
    if not np.isfinite(estimate):
        raise ValueError("non-finite estimate")
    acc.t += 1
    a = acc.schedule(acc.t)
    if acc.t == 0:
        acc.value = estimate
    else:
        acc.value = a * estimate + (1.0 - a) * acc.value
    return acc.value


def accumulate_gradient(acc: MemoryAccumulator, g) -> np.ndarray:
    """Componentwise version of :func:`accumulate_scalar`."""
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")
    acc.t += 1
    a = acc.schedule(acc.t)
    if acc.t == 0:
        acc.value = g.copy()
    else:
        acc.value = a * g + (1.0 - a) * acc.value
    return acc.value


def expanded_weights(schedule: CoefficientSchedule, t: int) -> np.ndarray:
    """Weights w_l over raw estimates 0..t reproducing the recurrence.

    ``w_l = a_l * prod_{s=1}^{t-l} (1 - a_{l+s})``; with a_0 = 1 they
    sum to one by telescoping.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    a = np.array([schedule(i) for i in range(t + 1)])
    w = np.empty(t + 1)
    tail = 1.0
    for l in range(t, -1, -1):
        w[l] = a[l] * tail
        tail *= 1.0 - a[l]
    return w
