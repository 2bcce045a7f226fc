import numpy as np
import pytest

from capa_crb import experiments as ex

N = 300


@pytest.fixture(scope="module")
def convergence(table1):
    return ex.run_gl_convergence(table1, (2, 220, 240, 260, 280, 300))


def test_gl_stabilizes_beyond_220(convergence):
    crb, power = convergence.array("crb_integral_value"), convergence.array("power_integral_value")
    assert np.all(np.abs(crb[1:] / crb[-1] - 1) < 1e-3)
    assert np.all(np.abs(power[1:] / power[-1] - 1) < 1e-3)


def test_gl_two_point_rule_insufficient(convergence):
    # two points per axis cannot separate the targets' receive responses at all
    assert np.isnan(convergence.array("crb_integral_value")[0])
    power = convergence.array("power_integral_value")
    assert abs(power[0] / power[-1] - 1) > 0.01


@pytest.fixture(scope="module")
def crb_map(table1):
    # x grid symmetric about the receive-aperture centre x = 0.5
    return ex.run_crb_map(table1, 60, nx=5, nz=3, x_range=(-5.5, 6.5), z_range=(1.0, 8.0))


def test_crb_map_finite(crb_map):
    assert np.all(np.isfinite(crb_map.array("log10_crb")))
    assert len(crb_map.rows) == 15


def test_crb_map_closer_is_better(table1):
    assert ex.single_target_crb(table1, (0.0, 0.0, 1.0), 60) < ex.single_target_crb(table1, (0.0, 0.0, 8.0), 60)


def test_crb_map_mirror_symmetry_about_rx_centre(capsys, crb_map):
    x, z, v = crb_map.array("x_m"), crb_map.array("z_m"), crb_map.array("log10_crb")
    worst_log, worst_lin = 0.0, 0.0
    for xi, zi, vi in zip(x, z, v):
        mirror = v[np.isclose(x, 1.0 - xi) & np.isclose(z, zi)][0]
        worst_log = max(worst_log, abs(vi - mirror) / abs(mirror))
        worst_lin = max(worst_lin, abs(10 ** (vi - mirror) - 1))
    with capsys.disabled():
        print(f"\ncrb-map asymmetry about x = 0.5 m: {worst_log:.2%} in log10, {worst_lin:.0%} in linear CRB")
    assert worst_log < 0.05


def test_frequency_and_target_count_orderings(table1):
    t = ex.run_sweeps(table1, N, powers_mA2=(100.0,), frequencies_ghz=(28.0, 30.0), target_counts=(1, 2))
    crb = {(r[0], r[1]): r[3] for r in t.rows}
    for count in (1, 2):
        assert crb[(30.0, count)] < crb[(28.0, count)]
    for f in (28.0, 30.0):
        assert crb[(f, 2)] > crb[(f, 1)]


@pytest.fixture(scope="module")
def robustness(table1):
    return ex.run_robustness(table1, 120, offsets=(-0.05, 0.0, 0.05), axes=("x", "z"))


def test_zero_offset_reproduces_nominal(robustness):
    rows = [r for r in robustness.rows if r[1] == 0.0]
    for r in rows:
        assert r[2] == pytest.approx(robustness.meta["nominal"], rel=1e-12)
        assert r[3] == pytest.approx(1.0, rel=1e-12)


def test_x_curve_asymmetric(robustness):
    x = {r[1]: r[3] for r in robustness.rows if r[0] == "x"}
    assert abs(x[-0.05] - x[0.05]) > 1e-3 * x[0.05]


def test_sweep_order_independent_of_workers(table1):
    a = ex.run_sweeps(table1, 40, powers_mA2=(50.0, 100.0), target_counts=(1, 2), workers=1)
    b = ex.run_sweeps(table1, 40, powers_mA2=(50.0, 100.0), target_counts=(1, 2), workers=2)
    assert a.rows == b.rows
