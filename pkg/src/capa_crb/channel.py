"""Scalar Green's-function responses, the round-trip channel, field synthesis and noise.

Conventions
-----------
Both legs use outgoing waves, ``exp(-j k0 d) / d``.  The transmit response
carries the Green's function amplitude ``j eta0 k0 / (4 pi)``; the receive
response is given the same magnitude law.  The round-trip channel is

    h(q, p) = (c0 / sqrt(N)) * sum_n alpha_n K(q, r_n) K(r_n, p),   K(a, b) = exp(-j k0 |a-b|) / |a-b|

so in terms of the prefactored responses ``h = s * sum_n alpha_n a_r a_t`` with
``s = (c0 / sqrt(N)) / (j eta0 k0 / 4 pi)^2 = -1/N`` (:func:`receive_scale`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Scenario, Aperture
from .quadrature import SampleGrid

SINGULAR_DISTANCE = 1e-9


class SingularityError(ValueError):
    """Field evaluated at (or within 1 nm of) its source point."""


def _displacement(a, b):
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d < SINGULAR_DISTANCE):
        raise SingularityError("coincident source and observation points")
    return diff, d


def kernel(d, k0):
    """exp(-j k0 d) / d."""
    return np.exp(-1j * k0 * d) / d


def _prefactor(k0, eta0):
    return 1j * eta0 * k0 / (4.0 * np.pi)


def a_t(target_pos, p, k0, eta0=376.73):
    """Transmit response j eta0 k0 exp(-j k0 |r - p|) / (4 pi |r - p|)."""
    _, d = _displacement(target_pos, p)
    return _prefactor(k0, eta0) * kernel(d, k0)


def a_r(q, target_pos, k0, eta0=376.73):
    """Receive response, same magnitude law as :func:`a_t`, outgoing phase."""
    _, d = _displacement(q, target_pos)
    return _prefactor(k0, eta0) * kernel(d, k0)


def grad_a_t(target_pos, p, k0, eta0=376.73):
    """Gradient of :func:`a_t` with respect to the target position, shape ``(..., 3)``."""
    diff, d = _displacement(target_pos, p)
    scal = -_prefactor(k0, eta0) * (1.0 + 1j * k0 * d) * np.exp(-1j * k0 * d) / d**3
    return scal[..., None] * diff


def grad_a_r(q, target_pos, k0, eta0=376.73):
    """Gradient of :func:`a_r` with respect to the target position, shape ``(..., 3)``."""
    diff, d = _displacement(q, target_pos)
    # d|q - r|/dr = -(q - r)/|q - r|
    scal = _prefactor(k0, eta0) * (1.0 + 1j * k0 * d) * np.exp(-1j * k0 * d) / d**3
    return scal[..., None] * diff


def channel_gain(s: Scenario) -> float:
    """Overall factor c0 / sqrt(N) of the round-trip channel."""
    return s.constants.coupling_c0 / np.sqrt(s.num_targets)


def receive_scale(s: Scenario) -> complex:
    """Factor turning ``a_r * a_t`` products into the round-trip channel (equals -1/N)."""
    return channel_gain(s) / s.constants.tx_prefactor**2


def round_trip_h(q, p, s: Scenario):
    """Round-trip channel h(q, p); ``q`` and ``p`` broadcast against each other."""
    k0 = s.constants.wavenumber_k0
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    total = 0.0
    for t in s.targets:
        _, dq = _displacement(q, t.r)
        _, dp = _displacement(t.r, p)
        total = total + t.reflection * kernel(dq, k0) * kernel(dp, k0)
    return channel_gain(s) * total


# ---------------------------------------------------------------------------
# currents and fields


@dataclass(frozen=True)
class CurrentFunction:
    """Scalar source current J(p) on the transmit aperture."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    description: str = "current"

    def __call__(self, points) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(points)), dtype=complex)

    def on(self, grid: SampleGrid) -> np.ndarray:
        return self(grid.points)

    def power(self, grid: SampleGrid) -> float:
        """Quadrature estimate of the integral of |J|^2."""
        return float(np.dot(grid.weights, np.abs(self.on(grid)) ** 2))

    def scaled(self, c: complex) -> "CurrentFunction":
        ev = self.evaluator
        return CurrentFunction(lambda pts: c * ev(pts), f"{c:.3g}*{self.description}")

    def __add__(self, other: "CurrentFunction") -> "CurrentFunction":
        e1, e2 = self.evaluator, other.evaluator
        return CurrentFunction(lambda pts: e1(pts) + e2(pts), f"{self.description}+{other.description}")


def zero_current() -> CurrentFunction:
    return CurrentFunction(lambda pts: np.zeros(len(pts), dtype=complex), "zero")


def grid_current(grid: SampleGrid, values, description="sampled") -> CurrentFunction:
    """Current known only at the sample points of ``grid``."""
    vals = np.asarray(values, dtype=complex)
    pts = grid.points

    def ev(points):
        if points.shape != pts.shape or not np.array_equal(points, pts):
            raise ValueError("sampled current evaluated off its grid")
        return vals

    return CurrentFunction(ev, description)


@dataclass(frozen=True)
class FieldSamples:
    grid: SampleGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[-1] != self.grid.size:
            raise ValueError("field samples do not match the grid")

    def energy(self) -> float:
        return float(np.dot(self.grid.weights, np.abs(self.values) ** 2))


def transmit_integrals(s: Scenario, tx_grid: SampleGrid, current_values):
    """Per-target integrals of a_t J and grad a_t J over the transmit aperture.

    Returns ``I1`` with shape ``(N,)`` and ``I2`` with shape ``(N, 3)``.
    """
    k0, eta0 = s.constants.wavenumber_k0, s.constants.impedance_eta0
    wj = tx_grid.weights * np.asarray(current_values, dtype=complex)
    r = s.positions[:, None, :]
    at = a_t(r, tx_grid.points[None], k0, eta0)
    gat = grad_a_t(r, tx_grid.points[None], k0, eta0)
    return at @ wj, np.einsum("nqi,q->ni", gat, wj)


def receive_factors(s: Scenario, q):
    """Unit-reflection receive factors ``u_n(q) = s a_r(q, r_n)`` and their gradients.

    Shapes ``(N, Q)`` and ``(N, Q, 3)``.
    """
    k0, eta0 = s.constants.wavenumber_k0, s.constants.impedance_eta0
    sc = receive_scale(s)
    r = s.positions[:, None, :]
    q = np.atleast_2d(q)[None]
    return sc * a_r(q, r, k0, eta0), sc * grad_a_r(q, r, k0, eta0)


def field_E(current: CurrentFunction, q, s: Scenario, tx_grid: SampleGrid):
    """Received field E(q) by direct quadrature of h(q, p) J(p) over the transmit grid."""
    q = np.atleast_2d(q)
    jw = current.on(tx_grid) * tx_grid.weights
    out = np.empty(len(q), dtype=complex)
    step = max(1, 2_000_000 // max(tx_grid.size, 1))
    for i in range(0, len(q), step):
        h = round_trip_h(q[i : i + step, None, :], tx_grid.points[None], s)
        out[i : i + step] = h @ jw
    return out


def field_E_factored(current: CurrentFunction, q, s: Scenario, tx_grid: SampleGrid):
    """E(q) = sum_n alpha_n u_n(q) int a_t(r_n, p) J(p) dp."""
    i1, _ = transmit_integrals(s, tx_grid, current.on(tx_grid))
    u, _ = receive_factors(s, q)
    return (s.reflections * i1) @ u


def field_samples(current: CurrentFunction, s: Scenario, tx_grid: SampleGrid, rx_grid: SampleGrid) -> FieldSamples:
    return FieldSamples(rx_grid, field_E_factored(current, rx_grid.points, s, tx_grid))


def sample_noise(rx_grid: SampleGrid, noise_power: float, rng_seed=None, draws: int | None = None):
    """Spatially white circular Gaussian noise on the receive grid.

    Each sample has variance ``noise_power / w_i`` with ``w_i`` its quadrature
    weight, so weighted sums reproduce the delta-correlated continuum.  With
    ``draws`` set, returns an array of shape ``(draws, Q)`` instead of a
    :class:`FieldSamples`.
    """
    if not noise_power > 0:
        raise ValueError("noise power must be positive")
    rng = np.random.default_rng(rng_seed)
    shape = (rx_grid.size,) if draws is None else (draws, rx_grid.size)
    std = np.sqrt(noise_power / (2.0 * rx_grid.weights))
    n = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * std
    return FieldSamples(rx_grid, n) if draws is None else n


def aperture_contains(ap: Aperture, points, tol=1e-12) -> np.ndarray:
    pts = np.atleast_2d(points)
    return (
        (pts[:, 0] >= ap.w_min - tol) & (pts[:, 0] <= ap.w_max + tol)
        & (pts[:, 1] >= ap.h_min - tol) & (pts[:, 1] <= ap.h_max + tol)
        & (np.abs(pts[:, 2]) <= tol)
    )
