import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from doppler_isac.scene import (RadarParams, ScenarioError, Target, doppler_phase_step, draw_rician,
                                load_scenario, parse_scenario, scenario_to_dict, snr_scale,
                                synthesize_cube, trial_rng)

from oracles import PHASE_STEP_6MPS_2US_5MM, SNR_SCALE_4_3DB

QUIET = RadarParams(range_bins=16, angle_bins=8, packets=32, rician_k_db=None, snr_db=None)
CELL = dict(range_m=5 * 0.085, azimuth_rad=QUIET.azimuth_of_bin(3))


def test_zero_doppler_grid_aligned_target_gives_unit_samples():
    cube = synthesize_cube([Target(**CELL, velocity_mps=0.0)], QUIET)
    assert np.allclose(cube.data[5, 3, :], 1.0, atol=1e-12)
    assert np.abs(cube.data).max() == pytest.approx(1.0)


def test_phase_step_for_6mps():
    p = RadarParams(wavelength_m=5e-3, pri_s=2e-6)
    assert doppler_phase_step(6.0, p) == pytest.approx(-PHASE_STEP_6MPS_2US_5MM, rel=1e-14)
    cube = synthesize_cube([Target(**CELL, velocity_mps=6.0)],
                           QUIET.with_(wavelength_m=5e-3, pri_s=2e-6))
    step = np.angle(cube.data[5, 3, 1:] / cube.data[5, 3, :-1])
    assert np.allclose(step, -PHASE_STEP_6MPS_2US_5MM, atol=1e-12)


def test_two_targets_same_cell_sum():
    a = Target(**CELL, velocity_mps=4.0)
    b = Target(**CELL, velocity_mps=-9.0, amplitude=0.5j)
    cube = synthesize_cube([a, b], QUIET)
    n = np.arange(QUIET.packets)
    expect = (np.exp(1j * doppler_phase_step(4.0, QUIET) * n)
              + 0.5j * np.exp(1j * doppler_phase_step(-9.0, QUIET) * n))
    assert np.allclose(cube.data[5, 3, :], expect, atol=1e-12)


def test_velocity_limit_names_target():
    p = QUIET.with_(pri_s=2e-6)
    fast = Target(**CELL, velocity_mps=p.v_max_mps + 1)
    with pytest.raises(ValueError, match="target 1"):
        synthesize_cube([Target(**CELL, velocity_mps=0.0), fast], p)


def test_empty_scene_rejected():
    with pytest.raises(ValueError):
        synthesize_cube([], QUIET)


@pytest.mark.parametrize("kwargs", [dict(wavelength_m=0), dict(pri_s=-1), dict(packets=3),
                                    dict(snr_reference="mean")])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        RadarParams(**kwargs)


def test_target_validation():
    with pytest.raises(ValueError):
        Target(range_m=-1, azimuth_rad=0, velocity_mps=0)
    with pytest.raises(ValueError):
        Target(range_m=1, azimuth_rad=2.0, velocity_mps=0)


def test_cpi_and_vmax():
    p = RadarParams(packets=200, pri_s=2e-6)
    assert p.cpi_s == pytest.approx(400e-6)
    assert p.v_max_mps == pytest.approx(4.99e-3 / 8e-6)


@pytest.mark.parametrize("power,snr,expected", [(1.0, 0.0, 1.0), (1.0, 10.0, 0.1), (4.0, 3.0, SNR_SCALE_4_3DB)])
def test_snr_scale(power, snr, expected):
    assert snr_scale(power, snr) == pytest.approx(expected, rel=1e-14)


def test_snr_scale_rejects_zero_power():
    with pytest.raises(ValueError):
        snr_scale(0.0, 10.0)


def test_rician_limits():
    rng = np.random.default_rng(0)
    assert draw_rician(None, rng) == 1
    assert draw_rician(math.inf, rng) == 1
    h = draw_rician(-math.inf, np.random.default_rng(1), size=200_000)
    assert np.mean(h) == pytest.approx(0, abs=0.01)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1, abs=0.01)


def test_rician_2db_unit_power():
    h = draw_rician(2.0, np.random.default_rng(2), size=1_000_000)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.01)
    k = 10 ** 0.2
    assert np.mean(h).real == pytest.approx(math.sqrt(k / (k + 1)), abs=0.005)


def test_noise_variance_nominal_reference():
    p = QUIET.with_(snr_db=10.0, rician_k_db=2.0, snr_reference="nominal")
    cube = synthesize_cube([Target(**CELL, velocity_mps=1.0, amplitude=2.0)], p)
    assert cube.noise_variance == pytest.approx(0.4)


def test_noise_variance_weakest_target_reference():
    p = QUIET.with_(snr_db=10.0, rician_k_db=2.0)
    targets = [Target(**CELL, velocity_mps=1.0), Target(**CELL, velocity_mps=5.0, amplitude=3.0)]
    cube = synthesize_cube(targets, p, trial=4)
    weakest = min(abs(cube.fading[0]) ** 2, 9 * abs(cube.fading[1]) ** 2)
    assert cube.noise_variance == pytest.approx(weakest / 10)


def test_noise_sample_variance():
    p = QUIET.with_(range_bins=64, angle_bins=32, snr_db=0.0)
    far = Target(range_m=0.0, azimuth_rad=-math.pi / 2, velocity_mps=0.0, amplitude=1e-9)
    cube = synthesize_cube([far], p)
    assert np.var(cube.data[30:, 16:, :]) == pytest.approx(cube.noise_variance, rel=0.03)


def test_reproducible_and_trial_dependent():
    p = QUIET.with_(snr_db=5.0, rician_k_db=2.0, rng_seed=3)
    t = [Target(**CELL, velocity_mps=2.0)]
    a = synthesize_cube(t, p, trial=2).data
    assert np.array_equal(a, synthesize_cube(t, p, trial=2).data)
    assert not np.array_equal(a, synthesize_cube(t, p, trial=3).data)
    assert not np.array_equal(a, synthesize_cube(t, p.with_(rng_seed=4), trial=2).data)


def test_streams_are_independent_of_order():
    x = trial_rng(1, 5, 0).standard_normal(4)
    trial_rng(1, 4, 0).standard_normal(100)
    assert np.array_equal(x, trial_rng(1, 5, 0).standard_normal(4))


velocities = st.floats(-600, 600, allow_nan=False)
ranges = st.integers(0, 15)
angles = st.integers(0, 7)


@given(st.lists(st.tuples(ranges, angles, velocities), min_size=1, max_size=3),
       st.lists(st.tuples(ranges, angles, velocities), min_size=1, max_size=3))
def test_linearity(a, b):
    def make(spec):
        return [Target(r * 0.085, QUIET.azimuth_of_bin(i), v) for r, i, v in spec]
    ta, tb = make(a), make(b)
    lhs = synthesize_cube(ta + tb, QUIET).data
    rhs = synthesize_cube(ta, QUIET).data + synthesize_cube(tb, QUIET).data
    assert np.allclose(lhs, rhs, atol=1e-12)


@given(st.floats(-600, 600), st.floats(0.0, 1.0))
def test_single_target_slow_time_is_linear_phase(v, offset):
    p = QUIET.with_(packets=64)
    t = Target((5 + offset) * 0.085, QUIET.azimuth_of_bin(3), v)
    cube = synthesize_cube([t], p)
    y = cube.data[5, 3, :]
    mag = np.abs(y)
    if mag[0] < 1e-6:
        return
    assert np.allclose(mag, mag[0], rtol=1e-12)
    phase = np.unwrap(np.angle(y / y[0]))
    n = np.arange(p.packets)
    slope = np.polyfit(n, phase, 1)[0]
    expect = -4 * math.pi * v * p.pri_s / p.wavelength_m
    wrapped = (slope - expect + math.pi) % (2 * math.pi) - math.pi
    assert abs(wrapped) <= 1e-9


# -- scenario files ------------------------------------------------------------------

DOC = {
    "schema_version": 1,
    "radar": {"pri_us": 2.0, "packets": 64, "range_bins": 16, "angle_bins": 8},
    "channel": {"rician_k_db": None, "snr_db": 12.5},
    "targets": [{"range_m": 0.85, "azimuth_deg": 10.0, "velocity_mps": 3.0, "amplitude_im": 1.0}],
}


def test_parse_scenario():
    scn = parse_scenario(DOC)
    assert scn.params.pri_s == pytest.approx(2e-6)
    assert scn.params.snr_db == 12.5
    assert scn.params.rician_k_db is None
    assert scn.targets[0].azimuth_rad == pytest.approx(math.radians(10))
    assert scn.targets[0].amplitude == 1 + 1j


def test_scenario_round_trip(tmp_path):
    scn = parse_scenario(DOC)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(scenario_to_dict(scn)))
    again = load_scenario(path)
    assert again.params == scn.params
    assert again.targets == scn.targets


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d["radar"].update(packets=2), "packets"),
    (lambda d: d["radar"].update(bogus=1), "bogus"),
    (lambda d: d.update(targets=[]), "targets"),
])
def test_scenario_validation(mutate, match):
    doc = json.loads(json.dumps(DOC))
    mutate(doc)
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(doc)


def test_scenario_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(path)
