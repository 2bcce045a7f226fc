import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from capa_crb.geometry import (Aperture, NearFieldWarning, PhysicalConstants, Scenario, Target,
                               admissibility_check, fraunhofer_distance, load_scenario, scenario_from_dict,
                               scenario_to_dict, square_apertures)
from capa_crb.quadrature import QuadratureGrid


def test_table1_defaults(table1):
    assert table1.targets[0].position == (-5.0, 0.0, 5.0)
    assert table1.targets[1].position == (5.0, 0.0, 5.0)
    assert table1.power_budget_A2 == pytest.approx(1e-4)
    assert table1.noise_power == 5.6e-3
    assert table1.quad_points_x == table1.quad_points_y == 300
    assert table1.constants.impedance_eta0 == 376.73
    assert all(t.reflection == 10 + 10j for t in table1.targets)
    assert table1.tx == Aperture(-1.0, 0.0, -0.5, 0.5)
    assert table1.rx == Aperture(0.0, 1.0, -0.5, 0.5)


def test_wavenumber_value(table1):
    k0 = 2 * math.pi * 28e9 / 2.998e8
    assert table1.constants.wavenumber_k0 == pytest.approx(k0, rel=1e-12)
    # the quoted 586.76 is a rounded figure; c = 2.998e8 gives 586.82
    assert table1.constants.wavenumber_k0 == pytest.approx(586.76, rel=2e-4)


def test_coupling_depends_on_target_count():
    c1 = PhysicalConstants(28e9, 376.73, 1).coupling_c0
    c4 = PhysicalConstants(28e9, 376.73, 4).coupling_c0
    assert c1 / c4 == pytest.approx(2.0)
    k0 = 2 * math.pi * 28e9 / 2.998e8
    assert c1 == pytest.approx(376.73**2 * k0**2 / (16 * math.pi**2))


@given(st.floats(1e9, 1e12))
def test_constants_round_trip(f):
    c = PhysicalConstants(f, 376.73, 2)
    assert c.wavenumber_k0 * c.wavelength_m == pytest.approx(2 * math.pi, rel=1e-12)
    back = PhysicalConstants.from_wavelength(c.wavelength_m, impedance_eta0=376.73, num_targets=2)
    assert back.frequency_hz == pytest.approx(f, rel=1e-12)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        Aperture(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        Target((0.0, 0.0, -1.0))
    with pytest.raises(ValueError):
        Target((0.0, 0.0, 1.0), complex("nan"))
    with pytest.raises(ValueError):
        PhysicalConstants(-1.0, 376.73, 1)


def test_coincident_targets_rejected(table1):
    with pytest.raises(ValueError):
        table1.with_positions([[1.0, 0.0, 2.0], [1.0, 0.0, 2.0 + 1e-8]])


def test_admissibility_table1(table1):
    diags = admissibility_check(table1)
    assert len(diags) == 2
    d = diags[0]
    assert d.range_m == pytest.approx(math.sqrt(50))
    assert d.fraunhofer_m == pytest.approx(2 * 2 / table1.constants.wavelength_m, rel=1e-12)
    assert d.fraunhofer_m == pytest.approx(373.6, abs=0.1)
    assert d.in_near_field and not d.possibly_reactive


def test_far_target_warns(table1):
    with pytest.warns(NearFieldWarning):
        s = table1.with_positions([[0.0, 0.0, 400.0]])
    assert not admissibility_check(s)[0].in_near_field


def test_reactive_target_flagged(table1):
    with pytest.warns(NearFieldWarning):
        s = table1.with_positions([[0.0, 0.0, 0.01]])
    d = admissibility_check(s)[0]
    assert d.in_near_field and d.possibly_reactive


def test_fraunhofer_uses_larger_diagonal(table1):
    s = Scenario(table1.constants, Aperture(0, 1, 0, 1), Aperture(1, 3, 0, 1), table1.targets)
    assert fraunhofer_distance(s) == pytest.approx(2 * 5 / table1.constants.wavelength_m)


def test_aperture_area_matches_quadrature(table1):
    grid = QuadratureGrid(table1.tx, 7)
    assert grid.total_weight == pytest.approx(table1.tx.area, rel=1e-10)


def test_square_apertures():
    tx, rx = square_apertures(0.25)
    assert tx.area == pytest.approx(0.25) and rx.area == pytest.approx(0.25)
    assert tx.w_max == 0.0 and rx.w_min == 0.0


def test_config_round_trip(tmp_path, table1):
    cfg = scenario_to_dict(table1)
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"scenario": cfg}))
    s = load_scenario(path)
    assert s == table1


def test_toml_config(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(
        'frequency_ghz = 30.0\npower_mA2 = 50\ngl_points = 64\n'
        '[[targets]]\nposition = [1.0, 0.5, 4.0]\nreflection_re = 1.0\nreflection_im = -2.0\n'
    )
    s = load_scenario(path)
    assert s.constants.frequency_hz == pytest.approx(30e9)
    assert s.power_budget_A2 == pytest.approx(5e-5)
    assert s.num_targets == 1 and s.constants.num_targets == 1
    assert s.targets[0].reflection == 1 - 2j
    assert s.quad_points_x == 64


def test_unknown_config_key():
    with pytest.raises(ValueError, match="unknown"):
        scenario_from_dict({"frequency": 28})


def test_scenario_immutable(table1):
    with pytest.raises(Exception):
        table1.noise_power = 1.0
    np.testing.assert_array_equal(table1.positions, [[-5, 0, 5], [5, 0, 5]])
