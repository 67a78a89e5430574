"""Stochastic integration rules: points and weights for loss evaluation.

All rules return a :class:`QuadratureBatch` whose weights sum to the
domain volume.  The randomized intermediate-point rule sorts a random
sample and assigns each point the width of its midpoint cell, which
integrates constants exactly and keeps the error well below plain Monte
Carlo for smooth integrands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadratureBatch",
    "mc_uniform",
    "rip_rule",
    "beta_sample",
    "mixed_batch",
    "tensor_grid_2d",
    "midpoint_rule",
]


@dataclass(frozen=True)
class QuadratureBatch:
    """Integration points (N, dim) with positive weights (N,)."""

    points: np.ndarray
    weights: np.ndarray
    rule: str
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).ravel())
        if self.points.shape[0] != self.weights.size:
            raise ValueError("points/weights length mismatch")
        if np.any(self.weights <= 0.0):
            raise ValueError("weights must be positive")

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def to_csv(self, path) -> None:
        cols = [self.points[:, d] for d in range(self.points.shape[1])]
        cols.append(self.weights)
        header = ",".join(["x", "y"][: self.points.shape[1]] + ["weight"])
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="")


def mc_uniform(volume: float, n: int, seed: int, dim: int = 1,
               lo: float = 0.0, hi: float = 1.0) -> QuadratureBatch:
    """Plain Monte Carlo on a box: i.i.d. uniform points, weights Vol/N."""
    if n < 1:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n, dim))
    w = np.full(n, volume / n)
    return QuadratureBatch(pts, w, "mc-uniform", seed)


def _dedupe_sorted(x: np.ndarray) -> np.ndarray:
    # zero-width cells waste points; nudge duplicates apart deterministically
    eps = np.finfo(float).eps
    for i in range(1, x.size):
        if x[i] <= x[i - 1]:
            x[i] = np.nextafter(x[i - 1], 1.0)
    return np.clip(x, eps, 1.0 - eps)


def rip_rule(points_or_n, seed: int | None = None, sampler=None) -> QuadratureBatch:
    """Randomized intermediate-point rule on (0, 1).

    Sorts the sample, sets cell boundaries at midpoints of consecutive
    points (0 and 1 at the ends), and weights each point by its cell
    width, so the weights always sum to one.

    Accepts either a prepared sample of points or a count ``n`` combined
    with ``sampler(n, rng) -> points`` (uniform by default).
    """
    if np.isscalar(points_or_n):
        n = int(points_or_n)
        if n < 1:
            raise ValueError("need at least one point")
        rng = np.random.default_rng(seed)
        x = sampler(n, rng) if sampler is not None else rng.uniform(size=n)
    else:
        x = np.asarray(points_or_n, dtype=float).ravel()
        if x.size < 1:
            raise ValueError("need at least one point")
    x = np.sort(x)
    x = _dedupe_sorted(x)
    m = np.empty(x.size + 1)
    m[0], m[-1] = 0.0, 1.0
    m[1:-1] = 0.5 * (x[:-1] + x[1:])
    w = np.diff(m)
    return QuadratureBatch(x[:, None], w, "rip", seed)


def beta_sample(n: int, a: float, b: float, seed: int | None = None,
                rng=None, mirror: bool = False) -> np.ndarray:
    """Draws from Beta(a, b) on (0, 1); ``mirror`` applies x -> 1 - x.

    The b = 1 (and by symmetry a = 1) case uses the exact inverse-power
    transform, which stays well-behaved for shapes as extreme as 1e4.
    """
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    u = rng.uniform(size=n)
    if b == 1.0:
        x = u ** (1.0 / a)
    elif a == 1.0:
        x = 1.0 - u ** (1.0 / b)
    else:
        x = rng.beta(a, b, size=n)
    if mirror:
        x = 1.0 - x
    return x


def mixed_batch(n: int, spec, seed: int | None = None, rng=None) -> QuadratureBatch:
    """Union of equal-sized beta samples fed through the intermediate-point rule.

    ``spec`` is a sequence of (a, b) or (a, b, mirror) tuples.
    """
    spec = list(spec)
    if n % len(spec):
        raise ValueError(f"{n} points not divisible into {len(spec)} sub-samples")
    if rng is None:
        rng = np.random.default_rng(seed)
    m = n // len(spec)
    parts = []
    for entry in spec:
        a, b = entry[0], entry[1]
        mirror = bool(entry[2]) if len(entry) > 2 else False
        parts.append(beta_sample(m, a, b, rng=rng, mirror=mirror))
    return rip_rule(np.concatenate(parts))


def tensor_grid_2d(nodes_per_axis: int, seed: int | None = None,
                   sampler=None, rng=None) -> QuadratureBatch:
    """Cartesian product of two 1D intermediate-point rules on (0,1)^2."""
    if rng is None:
        rng = np.random.default_rng(seed)
    draw = sampler if sampler is not None else (lambda n, r: r.uniform(size=n))
    bx = rip_rule(draw(nodes_per_axis, rng))
    by = rip_rule(draw(nodes_per_axis, rng))
    X, Y = np.meshgrid(bx.x, by.x, indexing="ij")
    WX, WY = np.meshgrid(bx.weights, by.weights, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureBatch(pts, (WX * WY).ravel(), "rip-2d", seed)


def midpoint_rule(n: int, dim: int = 1) -> QuadratureBatch:
    """Deterministic composite midpoint rule on (0,1)^dim (error reporting)."""
    x = (np.arange(n) + 0.5) / n
    if dim == 1:
        return QuadratureBatch(x[:, None], np.full(n, 1.0 / n), "midpoint")
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureBatch(pts, np.full(n * n, 1.0 / (n * n)), "midpoint-2d")
