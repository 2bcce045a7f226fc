"""Exit criteria, one test each, printing a PASS/FAIL line with the measured figures."""
import time

import numpy as np
import pytest

from capa_crb import experiments as ex
from capa_crb.baselines import optimize_multistart, random_policy_current, spda_problem
from capa_crb.channel import transmit_integrals
from capa_crb.estimator import MleWorkspace, spectrum_peak, spectrum_sweep, sweep_coordinates
from capa_crb.fisher import (CrbProblem, compute_B0, fim_for_current, fim_full, orthogonal_component, scenario_grids,
                             transmit_response_span)
from capa_crb.geometry import square_apertures
from capa_crb.optimizer import SmgdConfig, random_start, smgd
from capa_crb.quadrature import legendre_rule

pytestmark = pytest.mark.acceptance

CONVERGED = 300


def report(capsys, number: int, ok: bool, detail: str, elapsed: float, budget: float):
    within = elapsed < budget
    line = f"CRITERION {number:2d} {'PASS' if ok and within else 'FAIL'}: {detail} [{elapsed:.1f} s / {budget:g} s]"
    with capsys.disabled():
        print("\n" + line)
    assert within, line
    assert ok, line


def test_criterion_01_quadrature_exactness(capsys, table1):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (2, 5, 10, 20):
        rule = legendre_rule(n)
        coef = rng.standard_normal(2 * n)
        poly = np.polynomial.Polynomial(coef)
        a, b = -0.7, 1.3
        exact = poly.integ()(b) - poly.integ()(a)
        worst = max(worst, abs(rule.integrate(poly, a, b) - exact) / max(abs(exact), 1.0))
    B0 = compute_B0(table1, scenario_grids(table1, CONVERGED)[0])
    diag_err = float(np.max(np.abs(np.diag(B0) - table1.tx.area)))
    ok = worst < 1e-10 and diag_err < 1e-10
    report(capsys, 1, ok, f"max poly error {worst:.1e}, B0 diagonal error {diag_err:.1e}",
           time.perf_counter() - t0, 1.0)


def test_criterion_02_gl_convergence(capsys, table1):
    t0 = time.perf_counter()
    t = ex.run_gl_convergence(table1, (260, 300), seed=0)
    crb, power = t.array("crb_integral_value"), t.array("power_integral_value")
    d_crb = abs(crb[0] - crb[1]) / abs(crb[1])
    d_pow = abs(power[0] - power[1]) / abs(power[1])
    ok = d_crb < 1e-3 and d_pow < 1e-3
    report(capsys, 2, ok, f"n=260 vs 300: CRB rel diff {d_crb:.1e}, power rel diff {d_pow:.1e}",
           time.perf_counter() - t0, 120.0)


def test_criterion_03_gradient(capsys, problem80):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        w = problem80.normalize(random_start(2, 100 + seed))
        f, g = problem80.objective_and_gradient(w)
        h = 1e-6 * np.linalg.norm(w)
        fd = np.empty(2, dtype=complex)
        for k in range(2):
            e = np.zeros(2, dtype=complex)
            e[k] = h
            d_re = (problem80.objective(w + e) - problem80.objective(w - e)) / (2 * h)
            d_im = (problem80.objective(w + 1j * e) - problem80.objective(w - 1j * e)) / (2 * h)
            # F(w + d) ~ F + 2 Re{g^H d} gives dF/dRe = 2 Re g, dF/dIm = 2 Im g
            fd[k] = 0.5 * (d_re + 1j * d_im)
        worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    report(capsys, 3, worst < 1e-5, f"max relative gradient error {worst:.1e} over 20 feasible w",
           time.perf_counter() - t0, 120.0)


def test_criterion_04_blockwise_equivalence(capsys, table1, single_target):
    t0 = time.perf_counter()
    worst = 0.0
    for s in (single_target, table1):
        prob = CrbProblem(s, *scenario_grids(s, 120))
        for seed in range(3):
            w = prob.normalize(random_start(s.num_targets, seed))
            F_b = fim_full(np.outer(w, w.conj()), prob.cross, s.noise_power)
            F_d = fim_for_current(s, prob.tx_grid, prob.rx_grid, prob.current(w).on(prob.tx_grid))
            worst = max(worst, np.max(np.abs(F_b - F_d)) / np.max(np.abs(F_d)))
    report(capsys, 4, worst < 1e-8, f"max relative FIM mismatch {worst:.1e} (N=1 and N=2)",
           time.perf_counter() - t0, 60.0)


def test_criterion_05_orthogonal_component(capsys, table1):
    t0 = time.perf_counter()
    prob = CrbProblem(table1, *scenario_grids(table1, CONVERGED))
    tx = prob.tx_grid
    w = smgd(prob, rng_seed=0).w
    par = prob.current(w).on(tx)
    rng = np.random.default_rng(7)
    perp = orthogonal_component(transmit_response_span(table1, tx), tx.weights,
                                rng.standard_normal(tx.size) + 1j * rng.standard_normal(tx.size))
    perp *= np.sqrt(0.5 * prob.power_budget / np.dot(tx.weights, np.abs(perp) ** 2))
    aug = par + perp
    i1p, i2p = transmit_integrals(table1, tx, par)
    i1a, i2a = transmit_integrals(table1, tx, aug)
    d1 = np.max(np.abs(i1a - i1p) / np.abs(i1p))
    d2 = np.max(np.abs(i2a - i2p)) / np.max(np.abs(i2p))
    p_par, p_aug = (np.dot(tx.weights, np.abs(c) ** 2) for c in (par, aug))
    crb_par = prob.crb_for_current(par)
    crb_aug = prob.crb_for_current(aug * np.sqrt(p_par / p_aug))
    ok = d1 < 1e-8 and d2 < 1e-8 and p_aug > p_par and crb_par < crb_aug
    report(capsys, 5, ok, f"I1 change {d1:.1e}, I2 change {d2:.1e}, power {p_par:.2e} -> {p_aug:.2e}, "
           f"renormalized CRB {crb_aug:.3e} vs parallel {crb_par:.3e}", time.perf_counter() - t0, 60.0)


def test_criterion_06_power_law(capsys, table1):
    t0 = time.perf_counter()
    t = ex.run_sweeps(table1, CONVERGED, powers_mA2=(25.0, 50.0, 100.0, 200.0, 400.0), seeds=(0, 1))
    slope = ex.power_law_slope(t)
    report(capsys, 6, abs(slope + 1) <= 0.01, f"log-log slope {slope:.6f}", time.perf_counter() - t0, 300.0)


def _median_gap_noise(a, b, rng, draws=2000):
    """Bootstrap standard deviation of median(a) - median(b)."""
    idx_a = rng.integers(0, len(a), (draws, len(a)))
    idx_b = rng.integers(0, len(b), (draws, len(b)))
    return float(np.std(np.median(a[idx_a], axis=1) - np.median(b[idx_b], axis=1)))


def test_criterion_07_optimizer_ordering(capsys, table1):
    t0 = time.perf_counter()
    prob = CrbProblem(table1, *scenario_grids(table1, 120))
    seeds = range(24)
    # every rule reaches the same optimum within 200 iterations, so the
    # comparison is made at a fixed iteration budget
    budget = 20
    finals, monotone = {}, True
    for rule in ("FR", "PR", "plain"):
        cfg = SmgdConfig(direction_rule=rule, max_iter=budget, tolerance_delta=0.0)
        vals = []
        for seed in seeds:
            res = smgd(prob, cfg, rng_seed=seed)
            monotone &= res.trace.is_monotone()
            vals.append(res.trace.objectives[-1])
        finals[rule] = np.array(vals)
    med = {k: float(np.median(v)) for k, v in finals.items()}
    rng = np.random.default_rng(0)
    noise_fp = _median_gap_noise(finals["FR"], finals["PR"], rng)
    noise_pp = _median_gap_noise(finals["PR"], finals["plain"], rng)
    ok = (med["FR"] <= med["PR"] + 2 * noise_fp and med["PR"] <= med["plain"] + 2 * noise_pp
          and med["FR"] < med["plain"] and monotone)
    report(capsys, 7, ok, f"medians after {budget} iterations over {len(seeds)} seeds: FR {med['FR']:.4e}, "
           f"PR {med['PR']:.4e}, plain {med['plain']:.4e}; monotone={monotone}", time.perf_counter() - t0, 600.0)


def test_criterion_08_random_policy(capsys, table1, single_target):
    t0 = time.perf_counter()
    prob = CrbProblem(table1, *scenario_grids(table1, CONVERGED))
    wins = 0
    for seed in range(40):
        opt = smgd(prob, rng_seed=seed).objective
        rnd = prob.crb_for_current(random_policy_current(prob.tx_grid, seed, prob.power_budget).on(prob.tx_grid))
        wins += opt < rnd
    single = CrbProblem(single_target, *scenario_grids(single_target, CONVERGED))
    ws = MleWorkspace.synthesize(single_target, single.current(smgd(single, rng_seed=0).w), single.tx_grid,
                                 single.rx_grid, noiseless=True)
    step = 0.005
    errs = []
    for axis, k in (("x", 0), ("y", 1), ("z", 2)):
        truth = single_target.positions[0, k]
        peak = spectrum_peak(spectrum_sweep(ws, axis, sweep_coordinates(truth, 0.1, step)))
        errs.append(abs(peak.candidate_position[k] - truth))
    ok = wins >= 38 and max(errs) <= step
    report(capsys, 8, ok, f"optimized beats random in {wins}/40 seeds; max MLE peak error {max(errs):.1e} m",
           time.perf_counter() - t0, 600.0)


def test_criterion_09_capa_vs_spda(capsys, table1):
    t0 = time.perf_counter()
    s = table1.with_apertures(*square_apertures(0.25))
    t = ex.run_compare_spda(s, CONVERGED, seeds=(0, 1))
    capa, spda = t.array("crb")
    ratio = spda / capa
    # discretization consistency: dense elements with cell-sized areas approach the continuum
    lam = s.constants.wavelength_m
    dense = optimize_multistart(spda_problem(s, spacing=lam / 8, element_area=(lam / 8) ** 2), None, (0, 1))
    consistency = abs(dense.objective / capa - 1)
    ok = capa < spda and ratio >= 3 and consistency < 0.05
    report(capsys, 9, ok, f"SPDA/CAPA ratio {ratio:.2f} ({int(t.array('elements_per_side')[1])} elements per side); "
           f"lambda/8 consistency {consistency:.1e}", time.perf_counter() - t0, 900.0)


def test_criterion_10_robustness(capsys, table1):
    t0 = time.perf_counter()
    t = ex.run_robustness(table1, CONVERGED, offsets=(-0.15, -0.1, -0.05, 0.05, 0.1, 0.15),
                          axes=("x", "y", "z"), target_index=0, seeds=(0, 1), workers=4)
    ratios = t.array("ratio_to_nominal")
    worst = int(np.argmax(ratios))
    axis, off = t.rows[worst][0], t.rows[worst][1]
    report(capsys, 10, ratios.max() < 2.0, f"max CRB-at-truth ratio {ratios.max():.1f} at {axis}{off:+.2f} m; "
           f"ratios within 0.05 m: {np.round(ratios[np.abs(t.array('offset_m')) <= 0.05], 2).tolist()}",
           time.perf_counter() - t0, 600.0)
