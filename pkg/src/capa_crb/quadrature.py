"""Gauss-Legendre rules and tensor-product integration over rectangular apertures."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .geometry import Aperture

NEWTON_TOL = 1e-14
NEWTON_MAXITER = 100


def _legendre_with_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P_n(x) and P_n'(x) by the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x**2 - 1.0)
    return p, dp


@dataclass(frozen=True, eq=False)
class GaussLegendreRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f, a: float = -1.0, b: float = 1.0):
        c, m = 0.5 * (b - a), 0.5 * (b + a)
        return c * np.dot(self.weights, f(c * self.nodes + m))


@lru_cache(maxsize=64)
def legendre_rule(n: int) -> GaussLegendreRule:
    """n-point Gauss-Legendre rule on [-1, 1].

    Nodes are found by Newton's method on P_n started from the Chebyshev-like
    guesses cos(pi (i - 1/4) / (n + 1/2)); only the non-negative half is
    iterated and the rule is mirrored so it is exactly symmetric.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"invalid Gauss-Legendre order {n}")
    if n == 1:
        return GaussLegendreRule(1, np.array([0.0]), np.array([2.0]))

    m = (n + 1) // 2
    i = np.arange(1, m + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(NEWTON_MAXITER):
        p, dp = _legendre_with_derivative(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    else:
        raise RuntimeError(f"Newton iteration for P_{n} roots did not converge")
    _, dp = _legendre_with_derivative(n, x)
    w = 2.0 / ((1.0 - x**2) * dp**2)

    # x is descending and positive; an odd n has a centre node at 0
    if n % 2:
        x[-1] = 0.0
        nodes = np.concatenate([-x, x[-2::-1]])
        weights = np.concatenate([w, w[-2::-1]])
    else:
        nodes = np.concatenate([-x, x[::-1]])
        weights = np.concatenate([w, w[::-1]])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussLegendreRule(n, nodes, weights)


class SampleGrid:
    """Points on an aperture plane with positive integration weights."""

    aperture: Aperture

    @property
    def points(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def weights(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))


class QuadratureGrid(SampleGrid):
    """Tensor-product GL grid mapped onto an aperture by x = c_x x' + b_x, y = c_y y' + b_y."""

    def __init__(self, aperture: Aperture, nx: int, ny: int | None = None):
        self.aperture = aperture
        self.rule_x = legendre_rule(nx)
        self.rule_y = legendre_rule(ny if ny is not None else nx)

    def __repr__(self):
        return f"QuadratureGrid({self.aperture}, nx={self.rule_x.order}, ny={self.rule_y.order})"

    @property
    def scale(self) -> tuple[float, float, float, float]:
        a = self.aperture
        return 0.5 * a.width, 0.5 * (a.w_max + a.w_min), 0.5 * a.height, 0.5 * (a.h_max + a.h_min)

    @cached_property
    def points(self) -> np.ndarray:
        cx, bx, cy, by = self.scale
        xs = cx * self.rule_x.nodes + bx
        ys = cy * self.rule_y.nodes + by
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def weights(self) -> np.ndarray:
        cx, _, cy, _ = self.scale
        w = np.outer(self.rule_x.weights, self.rule_y.weights).ravel() * (cx * cy)
        w.setflags(write=False)
        return w


class PointGrid(SampleGrid):
    """Arbitrary sample points with explicit weights (e.g. discrete array elements)."""

    def __init__(self, aperture: Aperture, points, weights):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ValueError("points must be (M, 2) or (M, 3)")
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        w = np.broadcast_to(np.asarray(weights, dtype=float), (len(pts),)).copy()
        self.aperture = aperture
        self._points = pts
        self._weights = w

    @property
    def points(self):
        return self._points

    @property
    def weights(self):
        return self._weights


def integrate_2d(f, grid: SampleGrid):
    """Weighted sum of ``f(x, y)`` over the grid.

    ``f`` receives the flattened x and y coordinate arrays and returns either
    one value per point or an array whose leading axis runs over points
    (matrix-valued integrands are accumulated elementwise).
    """
    vals = np.asarray(f(grid.x, grid.y))
    if vals.ndim == 0:
        vals = np.full(grid.size, vals)
    if vals.shape[0] != grid.size:
        raise ValueError(f"integrand returned leading dimension {vals.shape[0]}, expected {grid.size}")
    bad = ~np.isfinite(vals.reshape(grid.size, -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise FloatingPointError(f"non-finite integrand at point ({grid.x[i]:.6g}, {grid.y[i]:.6g})")
    return np.tensordot(grid.weights, vals, axes=(0, 0))
