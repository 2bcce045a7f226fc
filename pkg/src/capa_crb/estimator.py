"""Maximum-likelihood spectra, reflection recovery and grid-search positioning.

For hypothesized positions the unit-reflection field templates ``E~_n(q)`` are
matched against the received samples ``y``:

    m_n = int conj(E~_n) y dq,   P_mn = int conj(E~_m) E~_n dq,   L = m^H P^{-1} m,

and ``alpha* = P^{-1} m`` are the least-squares reflections.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .channel import CurrentFunction, FieldSamples, a_r, a_t, field_samples, receive_scale, sample_noise
from .geometry import Scenario
from .quadrature import SampleGrid

GRAM_RCOND = 1e-12
AXES = {"x": 0, "y": 1, "z": 2}


class SingularGramError(np.linalg.LinAlgError):
    """Template Gram matrix is (numerically) singular, e.g. near-coincident candidates."""


@dataclass(frozen=True, eq=False)
class MleWorkspace:
    """Received samples plus everything needed to build candidate templates."""

    received: FieldSamples
    scenario: Scenario
    current: CurrentFunction
    tx_grid: SampleGrid

    def __post_init__(self):
        if self.received.grid.aperture != self.scenario.rx:
            raise ValueError("received samples are not on the scenario's receive aperture")

    @property
    def rx_grid(self) -> SampleGrid:
        return self.received.grid

    @property
    def y(self) -> np.ndarray:
        return self.received.values

    def with_received(self, values) -> "MleWorkspace":
        return MleWorkspace(FieldSamples(self.rx_grid, np.asarray(values, dtype=complex)),
                            self.scenario, self.current, self.tx_grid)

    @classmethod
    def synthesize(cls, s: Scenario, current: CurrentFunction, tx_grid: SampleGrid, rx_grid: SampleGrid,
                   noise_seed=None, noiseless: bool = False) -> "MleWorkspace":
        """Workspace with ``y = E + n`` generated from the scenario's true targets."""
        clean = field_samples(current, s, tx_grid, rx_grid)
        y = clean.values
        if not noiseless:
            y = y + sample_noise(rx_grid, s.noise_power, noise_seed).values
        return cls(FieldSamples(rx_grid, y), s, current, tx_grid)


@dataclass(frozen=True)
class SpectrumPoint:
    candidate_position: tuple[float, float, float]
    value: float


def _transmit_i1(ws: MleWorkspace, positions, chunk: int = 256) -> np.ndarray:
    k0, eta0 = ws.scenario.constants.wavenumber_k0, ws.scenario.constants.impedance_eta0
    wj = ws.tx_grid.weights * ws.current.on(ws.tx_grid)
    pts = ws.tx_grid.points
    out = np.empty(len(positions), dtype=complex)
    for i in range(0, len(positions), chunk):
        r = positions[i : i + chunk, None, :]
        out[i : i + chunk] = a_t(r, pts[None], k0, eta0) @ wj
    return out


def candidate_field(candidate_positions, ws: MleWorkspace) -> np.ndarray:
    """Unit-reflection field templates, shape ``(K, Q)`` for ``K`` candidate positions."""
    pos = np.atleast_2d(np.asarray(candidate_positions, dtype=float))
    k0, eta0 = ws.scenario.constants.wavenumber_k0, ws.scenario.constants.impedance_eta0
    i1 = _transmit_i1(ws, pos)
    ar = a_r(ws.rx_grid.points[None], pos[:, None, :], k0, eta0)
    return receive_scale(ws.scenario) * i1[:, None] * ar


def _match(templates, ws: MleWorkspace, y=None):
    wts = ws.rx_grid.weights
    y = ws.y if y is None else y
    tw = templates.conj() * wts
    m = tw @ y
    P = tw @ templates.T
    P = 0.5 * (P + P.conj().T)
    ev = np.linalg.eigvalsh(P)
    if ev[0] <= GRAM_RCOND * ev[-1]:
        raise SingularGramError(f"template Gram matrix is singular (eigenvalues {ev[0]:.3e} .. {ev[-1]:.3e})")
    return m, P


def mle_value(candidates, ws: MleWorkspace) -> float:
    """Concentrated likelihood ``m^H P^{-1} m`` for one hypothesized candidate set."""
    m, P = _match(candidate_field(candidates, ws), ws)
    return float(np.real(np.vdot(m, linalg.solve(P, m, assume_a="her"))))


def estimate_alpha(candidates, ws: MleWorkspace) -> np.ndarray:
    """Least-squares reflection coefficients ``P^{-1} m`` for the hypothesized positions."""
    m, P = _match(candidate_field(candidates, ws), ws)
    return linalg.solve(P, m, assume_a="her")


# ---------------------------------------------------------------------------
# sweeps


def _batched_values(ws: MleWorkspace, moving, fixed, ys) -> np.ndarray:
    """Likelihood for each moving-candidate position (rows) and each data vector (columns).

    ``fixed`` holds the other hypothesized positions (may be empty); the value
    splits as ``m_o^H P_oo^{-1} m_o + |m_c - p^H P_oo^{-1} m_o|^2 / (rho_c - p^H P_oo^{-1} p)``.
    """
    wts = ws.rx_grid.weights
    ys = np.atleast_2d(ys)  # (T, Q)
    out = np.empty((len(moving), len(ys)))
    if len(fixed):
        to = candidate_field(fixed, ws)
        m_o, P_oo = _match(to, ws, ys.T)  # m_o: (No, T)
        cho = linalg.cho_factor(P_oo)
        base = np.real(np.sum(m_o.conj() * linalg.cho_solve(cho, m_o), axis=0))
    chunk = max(1, 4_000_000 // max(ws.rx_grid.size, 1))
    for i in range(0, len(moving), chunk):
        tc = candidate_field(moving[i : i + chunk], ws)
        tcw = tc.conj() * wts
        m_c = tcw @ ys.T  # (K, T)
        rho = np.real(np.sum(tcw * tc, axis=1))
        if len(fixed):
            p = tcw @ to.T  # (K, No): int conj(E_c) E_o
            s = linalg.cho_solve(cho, p.conj().T)  # P_oo^{-1} p^H-ish, (No, K)
            resid = m_c - (p @ linalg.cho_solve(cho, m_o))
            schur = rho - np.real(np.sum(p * s.T, axis=1))
            out[i : i + chunk] = base[None] + np.abs(resid) ** 2 / schur[:, None]
        else:
            out[i : i + chunk] = np.abs(m_c) ** 2 / rho[:, None]
    return out


def _sweep_positions(ws: MleWorkspace, axis: str, coords, target_index: int, fixed_positions=None):
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    base = np.array(ws.scenario.positions if fixed_positions is None else fixed_positions, dtype=float)
    if not 0 <= target_index < len(base):
        raise IndexError("target index out of range")
    moving = np.repeat(base[target_index][None], len(coords), axis=0)
    moving[:, AXES[axis]] = coords
    fixed = np.delete(base, target_index, axis=0)
    return moving, fixed


def sweep_coordinates(center: float, half_width: float, step: float, offset: float = 0.0) -> np.ndarray:
    """Grid ``center - half_width + (k + offset) step`` inside ``[center - half_width, center + half_width]``.

    With ``offset = 0`` and ``half_width`` a multiple of ``step`` the centre is
    a grid point.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if not half_width > 0:
        raise ValueError("half width must be positive")
    if not 0 <= offset < 1:
        raise ValueError("offset is a fraction of the step in [0, 1)")
    count = int(np.floor((2 * half_width / step) - offset + 1e-9)) + 1
    return center - half_width + step * (np.arange(count) + offset)


def spectrum_sweep(ws: MleWorkspace, axis: str, coords: Iterable[float], target_index: int = 0,
                   fixed_positions=None) -> list[SpectrumPoint]:
    """1D likelihood sweep of one target's coordinate with the rest held at ``fixed_positions``.

    ``fixed_positions`` defaults to the scenario's true positions.
    """
    coords = np.asarray(list(coords), dtype=float)
    moving, fixed = _sweep_positions(ws, axis, coords, target_index, fixed_positions)
    vals = _batched_values(ws, moving, fixed, ws.y)[:, 0]
    return [SpectrumPoint(tuple(map(float, p)), float(v)) for p, v in zip(moving, vals)]


def spectrum_peak(points: Sequence[SpectrumPoint]) -> SpectrumPoint:
    """First maximum in scan order."""
    return points[int(np.argmax([p.value for p in points]))]


def peak_to_sidelobe(values, coords, mainlobe_halfwidth: float) -> float:
    """Peak over the largest value outside ``|coord - peak| > mainlobe_halfwidth``."""
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    k = int(np.argmax(values))
    outside = np.abs(coords - coords[k]) > mainlobe_halfwidth
    if not outside.any():
        return np.inf
    return float(values[k] / values[outside].max())


def half_power_width(values, coords) -> float:
    """Width of the contiguous region around the peak where the value stays above half of it."""
    values = np.asarray(values, dtype=float)
    k = int(np.argmax(values))
    above = values >= 0.5 * values[k]
    lo = k
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = k
    while hi < len(values) - 1 and above[hi + 1]:
        hi += 1
    return float(coords[hi] - coords[lo])


@dataclass(frozen=True)
class NmseRow:
    step_m: float
    nmse: float


def nmse_vs_step(step_sizes, ws: MleWorkspace, trials: int = 50, rng_seed=0, half_width: float = 0.25,
                 axes: Sequence[str] = ("x", "z"), target_index: int = 0, noiseless: bool = False,
                 grid_offset: float = 0.0) -> list[NmseRow]:
    """Per-axis grid-search NMSE ``E{|r^ - r|^2} / |r|^2`` averaged over ``axes`` and trials.

    Each axis is searched separately on the grid of :func:`sweep_coordinates`
    centred on the truth (shifted by ``grid_offset`` steps), the other
    coordinates fixed at their true values.
    Noise draws come from one seeded generator and are shared across step
    sizes, so curves are directly comparable.
    """
    s = ws.scenario
    truth = s.positions[target_index]
    clean = field_samples(ws.current, s, ws.tx_grid, ws.rx_grid).values
    if noiseless:
        ys = clean[None]
    else:
        ys = clean[None] + sample_noise(ws.rx_grid, s.noise_power, rng_seed, draws=trials)
    rows = []
    for step in step_sizes:
        per_axis = []
        for axis in axes:
            coords = sweep_coordinates(truth[AXES[axis]], half_width, step, grid_offset)
            moving, fixed = _sweep_positions(ws, axis, coords, target_index)
            vals = _batched_values(ws, moving, fixed, ys)
            est = coords[np.argmax(vals, axis=0)]
            per_axis.append(np.mean((est - truth[AXES[axis]]) ** 2))
        rows.append(NmseRow(float(step), float(np.mean(per_axis) / np.dot(truth, truth))))
    return rows


def write_spectrum_csv(path, axis: str, points: Sequence[SpectrumPoint], header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        wr = csv.writer(fh)
        wr.writerow(["axis", "coordinate_m", "spectrum_value"])
        for p in points:
            wr.writerow([axis, f"{p.candidate_position[AXES[axis]]:.9f}", f"{p.value:.12e}"])


def write_nmse_csv(path, rows: Sequence[NmseRow], header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        wr = csv.writer(fh)
        wr.writerow(["step_m", "nmse"])
        for r in rows:
            wr.writerow([f"{r.step_m:.9f}", f"{r.nmse:.12e}"])
