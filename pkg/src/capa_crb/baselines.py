"""Reference designs: random-phase currents, discrete (SPDA) arrays and beam patterns."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import CurrentFunction, grid_current
from .fisher import CrbProblem
from .geometry import Aperture, Scenario
from .optimizer import SmgdConfig, SmgdResult, smgd
from .quadrature import PointGrid, SampleGrid


def random_policy_current(tx_grid: SampleGrid, rng_seed=None, power: float | None = None) -> CurrentFunction:
    """Constant-modulus current ``exp(j phi) / sqrt(area)`` with i.i.d. uniform phases.

    One phase is drawn per sample point of ``tx_grid``, so the current is
    reproducible for a given seed.  With ``power`` set the current is scaled
    by ``sqrt(power)``.
    """
    rng = np.random.default_rng(rng_seed)
    phase = rng.uniform(-np.pi, np.pi, tx_grid.size)
    amp = 1.0 / np.sqrt(tx_grid.aperture.area)
    if power is not None:
        amp *= np.sqrt(power)
    return grid_current(tx_grid, amp * np.exp(1j * phase), f"random(seed={rng_seed})")


# ---------------------------------------------------------------------------
# discrete arrays


@dataclass(frozen=True, eq=False)
class SpdaArray:
    """Uniform rectangular element grid on an aperture with one effective area per element."""

    aperture: Aperture
    element_positions: np.ndarray  # (M, 3)
    element_area: float
    spacing: float

    @classmethod
    def on_aperture(cls, ap: Aperture, wavelength: float, spacing: float | None = None,
                    element_area: float | None = None) -> "SpdaArray":
        """Half-wavelength grid by default, cells centred half a spacing in from the min corner.

        ``element_area`` defaults to ``wavelength**2 / (4 pi)``.
        """
        d = 0.5 * wavelength if spacing is None else float(spacing)
        area = wavelength**2 / (4 * np.pi) if element_area is None else float(element_area)
        nx = int(np.floor(ap.width / d + 1e-9))
        ny = int(np.floor(ap.height / d + 1e-9))
        if nx < 1 or ny < 1:
            raise ValueError(f"aperture {ap.width:g} x {ap.height:g} m holds no element at spacing {d:g} m")
        xs = ap.w_min + d * (np.arange(nx) + 0.5)
        ys = ap.h_min + d * (np.arange(ny) + 0.5)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pos = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
        return cls(ap, pos, area, d)

    @property
    def count(self) -> int:
        return len(self.element_positions)

    @property
    def grid(self) -> PointGrid:
        return PointGrid(self.aperture, self.element_positions, self.element_area)


def spda_problem(s: Scenario, spacing: float | None = None, element_area: float | None = None) -> CrbProblem:
    """CRB problem with aperture integrals replaced by element sums weighted by ``element_area``."""
    lam = s.constants.wavelength_m
    tx = SpdaArray.on_aperture(s.tx, lam, spacing, element_area)
    rx = SpdaArray.on_aperture(s.rx, lam, spacing, element_area)
    return CrbProblem(s, tx.grid, rx.grid)


def optimize_multistart(problem: CrbProblem, config: SmgdConfig | None = None, seeds=(0,)) -> SmgdResult:
    """Best SMGD result over several seeded starting points."""
    best = None
    for seed in seeds:
        res = smgd(problem, config, rng_seed=seed)
        if best is None or res.objective < best.objective:
            best = res
    return best


def spda_crb(s: Scenario, config: SmgdConfig | None = None, seeds=(0,), spacing: float | None = None,
             element_area: float | None = None) -> float:
    """Optimized Tr{CRB} of the discrete array with the same subspace design and optimizer."""
    return optimize_multistart(spda_problem(s, spacing, element_area), config, seeds).objective


# ---------------------------------------------------------------------------
# beam pattern


def xz_plane(x_range, z_range, nx: int, nz: int, y: float = 0.0) -> np.ndarray:
    """Evaluation points on a regular ``(nx, nz)`` grid of the plane ``y = const``, x-major order."""
    xs = np.linspace(x_range[0], x_range[1], nx)
    zs = np.linspace(z_range[0], z_range[1], nz)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    return np.column_stack([X.ravel(), np.full(X.size, y), Z.ravel()])


def beam_pattern(current: CurrentFunction, points, s: Scenario, tx_grid: SampleGrid) -> np.ndarray:
    """Peak-normalized ``|int exp(-j k0 |r - p|) J(p) dp|^2`` at each evaluation point.

    Only the phase of the transmit kernel is kept, so the pattern shows where
    energy is focused without the range pathloss.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k0 = s.constants.wavenumber_k0
    wj = tx_grid.weights * current.on(tx_grid)
    src = tx_grid.points
    out = np.empty(len(pts))
    chunk = max(1, 2_000_000 // max(tx_grid.size, 1))
    for i in range(0, len(pts), chunk):
        d = np.linalg.norm(pts[i : i + chunk, None, :] - src[None], axis=-1)
        out[i : i + chunk] = np.abs(np.exp(-1j * k0 * d) @ wj) ** 2
    peak = out.max()
    return out / peak if peak > 0 else out


def write_beam_csv(path, points, values, header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        wr = csv.writer(fh)
        wr.writerow(["x_m", "z_m", "value_normalized"])
        for p, v in zip(np.atleast_2d(points), values):
            wr.writerow([f"{p[0]:.9f}", f"{p[2]:.9f}", f"{v:.12e}"])
