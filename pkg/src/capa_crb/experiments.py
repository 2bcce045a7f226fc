"""Experiment drivers behind the command-line interface.

Every driver is deterministic for a given scenario and seed and returns a
:class:`Table` whose rows come out in sweep order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .baselines import beam_pattern, optimize_multistart, random_policy_current, spda_problem, xz_plane
from .estimator import MleWorkspace, nmse_vs_step, spectrum_sweep, sweep_coordinates
from .fisher import CrbProblem, scenario_grids
from .geometry import NearFieldWarning, Scenario, Target, scenario_to_dict
from .optimizer import SmgdConfig, SmgdResult, random_start, smgd

FIDELITY_GL_POINTS = {"test": 120, "paper": 300}
GL_CONVERGENCE_POINTS = (2, 20, 40, 60, 80, 100, 120, 140, 160, 180, 200, 220, 240, 260, 280, 300)


@dataclass
class Table:
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.column(name), dtype=float)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return str(v)


def write_table_csv(path, table: Table, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(table.columns)
        for r in table.rows:
            wr.writerow([_fmt(v) for v in r])


def read_table_csv(path) -> Table:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return Table(rows[0], [tuple(r) for r in rows[1:]])


def config_hash(payload: dict) -> str:
    """Short SHA-256 of the canonical JSON form of an experiment description."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map, optionally over a process pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# helpers


def problem_for(s: Scenario, n: int | None = None) -> CrbProblem:
    return CrbProblem(s, *scenario_grids(s, n))


def optimize_scenario(s: Scenario, n: int | None = None, config: SmgdConfig | None = None,
                      seeds: Iterable[int] = (0,)) -> tuple[CrbProblem, SmgdResult]:
    prob = problem_for(s, n)
    return prob, optimize_multistart(prob, config, tuple(seeds))


def subset_targets(s: Scenario, count: int) -> Scenario:
    if not 1 <= count <= s.num_targets:
        raise ValueError(f"scenario has {s.num_targets} targets, cannot use {count}")
    return s.with_targets(s.targets[:count])


# ---------------------------------------------------------------------------
# drivers


def run_gl_convergence(s: Scenario, n_values=GL_CONVERGENCE_POINTS, seed: int = 0) -> Table:
    """CRB and power integrals for one fixed, unnormalized random ``w`` across GL orders."""
    w = random_start(s.num_targets, seed)
    table = Table(["n_points", "crb_integral_value", "power_integral_value"])
    for n in n_values:
        prob = problem_for(s, int(n))
        try:
            crb = prob.objective(w)
        except np.linalg.LinAlgError:
            crb = float("nan")
        table.rows.append((int(n), crb, prob.power(w)))
    return table


def run_optimize(s: Scenario, n: int | None = None, rules: Sequence[str] = ("FR",), starts: int = 1,
                 seed: int = 0, max_iter: int = 200) -> tuple[Table, np.ndarray, float]:
    """SMGD traces; returns the trace table, the best ``w`` and its objective.

    With one rule and one start the columns are ``iter, objective, grad_norm,
    step``; otherwise ``rule`` and ``start`` lead each row.
    """
    prob = problem_for(s, n)
    long_form = len(rules) > 1 or starts > 1
    cols = ["iter", "objective", "grad_norm", "step"]
    table = Table((["rule", "start"] if long_form else []) + cols)
    best = None
    for rule in rules:
        cfg = SmgdConfig(direction_rule=rule, max_iter=max_iter)
        for k in range(starts):
            res = smgd(prob, cfg, rng_seed=seed + k)
            for r in res.trace.records:
                row = (r.iteration, r.objective, r.grad_norm, r.step)
                table.rows.append(((rule, k) if long_form else ()) + row)
            if best is None or res.objective < best.objective:
                best = res
    return table, best.w, best.objective


def single_target_crb(s: Scenario, position, n: int | None = None, current_values=None) -> float:
    """Tr{CRB} for one target at ``position``: power-optimal current, or a given current."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearFieldWarning)
        st = s.with_targets([Target(tuple(position), s.targets[0].reflection)])
    prob = problem_for(st, n)
    if current_values is not None:
        return prob.crb_for_current(current_values)
    # one target: Tr{CRB} depends on |w| only, so the power-limited w is optimal
    w = np.array([np.sqrt(prob.power_budget / prob.B0[0, 0].real)], dtype=complex)
    return prob.objective(w)


def _map_point(args):
    s, pos, n, cur = args
    return single_target_crb(s, pos, n, cur)


def run_crb_map(s: Scenario, n: int | None = None, nx: int = 20, nz: int = 20, x_range=(-7.0, 7.0),
                z_range=(0.1, 9.0), mode: str = "optimized", workers: int = 1) -> Table:
    """log10 Tr{CRB} of a single target over an x-z grid (y = 0).

    ``mode="optimized"`` re-optimizes the current per point; ``mode="fixed"``
    keeps the current optimized for the scenario's own targets.
    """
    if mode not in ("optimized", "fixed"):
        raise ValueError("mode must be 'optimized' or 'fixed'")
    pts = xz_plane(x_range, z_range, nx, nz)
    cur = None
    if mode == "fixed":
        prob, res = optimize_scenario(s, n)
        cur = prob.current(res.w).on(prob.tx_grid)
    vals = parallel_map(_map_point, [(s, p, n, cur) for p in pts], workers)
    table = Table(["x_m", "z_m", "log10_crb"])
    for p, v in zip(pts, vals):
        table.rows.append((float(p[0]), float(p[2]), float(np.log10(v))))
    return table


def _sweep_point(args):
    s, n, seeds = args
    return optimize_scenario(s, n, seeds=seeds)[1].objective


def run_sweeps(s: Scenario, n: int | None = None, powers_mA2: Sequence[float] = (100.0,),
               frequencies_ghz: Sequence[float] | None = None, target_counts: Sequence[int] | None = None,
               seeds: Sequence[int] = (0,), workers: int = 1) -> Table:
    """Optimized Tr{CRB} over the product of power, frequency and target count."""
    freqs = [s.constants.frequency_hz / 1e9] if frequencies_ghz is None else list(frequencies_ghz)
    counts = [s.num_targets] if target_counts is None else list(target_counts)
    jobs, keys = [], []
    for f in freqs:
        for c in counts:
            for p in powers_mA2:
                sc = subset_targets(s, c).with_frequency(f * 1e9)
                sc = replace(sc, power_budget_A2=p / 1e6)
                jobs.append((sc, n, tuple(seeds)))
                keys.append((float(f), int(c), float(p)))
    vals = parallel_map(_sweep_point, jobs, workers)
    table = Table(["frequency_ghz", "num_targets", "power_mA2", "crb"])
    for k, v in zip(keys, vals):
        table.rows.append(k + (float(v),))
    return table


def power_law_slope(table: Table) -> float:
    """Least-squares slope of log Tr{CRB} against log P."""
    p, c = table.array("power_mA2"), table.array("crb")
    return float(np.polyfit(np.log(p), np.log(c), 1)[0])


def _robust_point(args):
    s, truth, n, target_index, axis, off, seeds = args
    pos = s.positions.copy()
    pos[target_index, axis] += off
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearFieldWarning)
        guess = s.with_positions(pos)
    prob, res = optimize_scenario(guess, n, seeds=seeds)
    return truth.crb_for_current(prob.current(res.w).on(prob.tx_grid))


def run_robustness(s: Scenario, n: int | None = None, offsets=(-0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15),
                   axes: Sequence[str] = ("x", "y", "z"), target_index: int = 0, seeds: Sequence[int] = (0,),
                   workers: int = 1) -> Table:
    """Design with one target's position offset along each axis, evaluate at the true geometry."""
    truth = problem_for(s, n)
    nominal = optimize_multistart(truth, None, tuple(seeds)).objective
    ax_index = {"x": 0, "y": 1, "z": 2}
    jobs, keys = [], []
    for a in axes:
        for off in offsets:
            jobs.append((s, truth, n, target_index, ax_index[a], float(off), tuple(seeds)))
            keys.append((a, float(off)))
    vals = parallel_map(_robust_point, jobs, workers)
    table = Table(["axis", "offset_m", "crb_at_truth", "ratio_to_nominal"], meta={"nominal": nominal})
    for (a, off), v in zip(keys, vals):
        table.rows.append((a, off, float(v), float(v / nominal)))
    return table


def run_compare_spda(s: Scenario, n: int | None = None, seeds: Sequence[int] = (0, 1)) -> Table:
    """Optimized Tr{CRB} of the continuous aperture and of its half-wavelength discrete counterpart."""
    capa = optimize_scenario(s, n, seeds=seeds)[1].objective
    sp = spda_problem(s)
    spda = optimize_multistart(sp, None, tuple(seeds)).objective
    table = Table(["architecture", "elements_per_side", "crb", "ratio_to_capa"])
    table.rows.append(("CAPA", 0, capa, 1.0))
    table.rows.append(("SPDA", sp.tx_grid.size, spda, spda / capa))
    return table


def workspace_for(s: Scenario, n: int | None, policy: str, seed: int, noiseless: bool) -> MleWorkspace:
    if policy == "optimized":
        prob, res = optimize_scenario(s, n, seeds=(seed,))
        cur = prob.current(res.w)
        tx, rx = prob.tx_grid, prob.rx_grid
    elif policy == "random":
        tx, rx = scenario_grids(s, n)
        cur = random_policy_current(tx, seed, s.power_budget_A2)
    else:
        raise ValueError("policy must be 'optimized' or 'random'")
    return MleWorkspace.synthesize(s, cur, tx, rx, noise_seed=seed + 1, noiseless=noiseless)


def run_mle_spectrum(s: Scenario, n: int | None = None, axes: Sequence[str] = ("x", "z"), half_width: float = 0.2,
                     step: float = 0.005, policy: str = "optimized", seed: int = 0, noiseless: bool = False,
                     target_index: int = 0) -> Table:
    ws = workspace_for(s, n, policy, seed, noiseless)
    table = Table(["axis", "coordinate_m", "spectrum_value"], meta={"policy": policy})
    ax_index = {"x": 0, "y": 1, "z": 2}
    for a in axes:
        centre = s.positions[target_index][ax_index[a]]
        pts = spectrum_sweep(ws, a, sweep_coordinates(centre, half_width, step), target_index)
        for p in pts:
            table.rows.append((a, p.candidate_position[ax_index[a]], p.value))
    return table


def run_nmse_step(s: Scenario, n: int | None = None, steps=(0.001, 0.002, 0.005, 0.01, 0.02, 0.05),
                  trials: int = 50, seed: int = 0, half_width: float = 0.25, grid_offset: float = 0.5,
                  policy: str = "optimized") -> Table:
    ws = workspace_for(s, n, policy, seed, noiseless=True)
    rows = nmse_vs_step(steps, ws, trials, seed, half_width, grid_offset=grid_offset)
    return Table(["step_m", "nmse"], [(r.step_m, r.nmse) for r in rows])


def run_beam_pattern(s: Scenario, n: int | None = None, nx: int = 141, nz: int = 90, x_range=(-7.0, 7.0),
                     z_range=(0.1, 9.0), seed: int = 0) -> Table:
    prob, res = optimize_scenario(s, n, seeds=(seed,))
    pts = xz_plane(x_range, z_range, nx, nz)
    vals = beam_pattern(prob.current(res.w), pts, s, prob.tx_grid)
    table = Table(["x_m", "z_m", "value_normalized"])
    for p, v in zip(pts, vals):
        table.rows.append((float(p[0]), float(p[2]), float(v)))
    return table


def experiment_payload(kind: str, s: Scenario, **params) -> dict:
    return {"kind": kind, "scenario": scenario_to_dict(s), "params": params}
