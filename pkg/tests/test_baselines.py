import numpy as np
import pytest

from capa_crb.baselines import (SpdaArray, beam_pattern, optimize_multistart, random_policy_current, spda_problem,
                                write_beam_csv, xz_plane)
from capa_crb.experiments import problem_for
from capa_crb.fisher import UnidentifiableError
from capa_crb.geometry import NearFieldWarning, square_apertures
from capa_crb.optimizer import SmgdConfig


def test_random_current_power_and_determinism(problem80):
    tx = problem80.tx_grid
    cur = random_policy_current(tx, 3, power=1e-4)
    vals = cur.on(tx)
    assert np.dot(tx.weights, np.abs(vals) ** 2) == pytest.approx(1e-4, rel=1e-10)
    np.testing.assert_allclose(np.abs(vals), np.sqrt(1e-4 / tx.aperture.area))
    np.testing.assert_array_equal(vals, random_policy_current(tx, 3, power=1e-4).on(tx))
    assert not np.array_equal(vals, random_policy_current(tx, 4, power=1e-4).on(tx))


def test_random_policy_worse_than_optimized(problem80):
    res = optimize_multistart(problem80, SmgdConfig(max_iter=60), (0,))
    cur = random_policy_current(problem80.tx_grid, 0, problem80.power_budget).on(problem80.tx_grid)
    assert problem80.crb_for_current(cur) > 100 * res.objective


def test_half_wavelength_element_count(table1):
    lam = table1.constants.wavelength_m
    arr = SpdaArray.on_aperture(table1.tx, lam)
    assert arr.count == 186 * 186
    assert arr.element_area == pytest.approx(lam**2 / (4 * np.pi))
    p = arr.element_positions
    assert p[:, 0].min() > table1.tx.w_min and p[:, 0].max() < table1.tx.w_max
    np.testing.assert_allclose(np.diff(np.unique(p[:, 1])), lam / 2, rtol=1e-9)


def test_square_aperture_counts(table1):
    tx, _ = square_apertures(0.25)
    assert SpdaArray.on_aperture(tx, table1.constants.wavelength_m).count == 93 * 93


def test_aperture_too_small_for_elements(table1):
    tiny, _ = square_apertures(1e-6)
    with pytest.raises(ValueError):
        SpdaArray.on_aperture(tiny, table1.constants.wavelength_m)


def test_single_element_array_unidentifiable(single_target):
    lam = single_target.constants.wavelength_m
    tx, rx = square_apertures((0.6 * lam) ** 2)
    with pytest.warns(NearFieldWarning):
        s = single_target.with_apertures(tx, rx)
    prob = spda_problem(s)
    assert prob.tx_grid.size == 1
    with pytest.raises(UnidentifiableError):
        prob.objective(np.ones(1))


def test_spda_converges_to_continuous_with_dense_sampling(single_target):
    s = single_target.with_apertures(*square_apertures(0.04))
    lam = s.constants.wavelength_m
    dense = spda_problem(s, spacing=lam / 8, element_area=(lam / 8) ** 2)
    capa = problem_for(s, 80)
    w = lambda p: np.array([np.sqrt(p.power_budget / p.B0[0, 0].real)])  # noqa: E731
    assert dense.objective(w(dense)) == pytest.approx(capa.objective(w(capa)), rel=0.05)


def test_beam_pattern_peaks_near_targets(problem80, table1):
    res = optimize_multistart(problem80, SmgdConfig(max_iter=60), (0,))
    pts = xz_plane((-7, 7), (1, 9), 57, 33)
    vals = beam_pattern(problem80.current(res.w), pts, table1, problem80.tx_grid)
    assert vals.max() == pytest.approx(1.0)
    assert np.all(vals >= 0)
    best = pts[np.argmax(vals)]
    assert min(np.linalg.norm(best - r) for r in table1.positions) < 0.6


def test_xz_plane_layout():
    pts = xz_plane((0, 1), (2, 3), 3, 2, y=0.5)
    assert pts.shape == (6, 3)
    np.testing.assert_allclose(pts[:2], [[0, 0.5, 2], [0, 0.5, 3]])


def test_beam_csv(tmp_path):
    pts = xz_plane((0, 1), (2, 3), 2, 2)
    write_beam_csv(tmp_path / "b.csv", pts, np.ones(4), "x")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[1] == "x_m,z_m,value_normalized" and len(lines) == 6
