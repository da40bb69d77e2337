import math

import numpy as np
import pytest

from doppler_isac import doppler, harness
from doppler_isac.doppler import EstimatorConfig
from doppler_isac.harness import (EstimatorSpec, SweepResult, SweepRow, SweepSpec, assignment_error,
                                  complexity_report, csv_text, emit_csv, emit_plotdata, parse_csv,
                                  read_csv, run_sweep)
from doppler_isac.numlin import SingularMatrixError
from doppler_isac.scene import RadarParams, Target

SMALL = RadarParams(range_bins=16, angle_bins=8, packets=64)
CELL = dict(range_m=5 * 0.085, azimuth_rad=0.0)


def pair(v1, v2):
    return (Target(**CELL, velocity_mps=v1), Target(**CELL, velocity_mps=v2))


def test_assignment_error_is_permutation_fair():
    assert assignment_error([1.0, 5.0], [5.0, 1.0]) == 0.0
    assert assignment_error([1.0, 5.0], [1.5, 4.0]) == assignment_error([5.0, 1.0], [1.5, 4.0])
    assert assignment_error([2.0], [1.0]) == 1.0
    with pytest.raises(ValueError):
        assignment_error([1.0], [1.0, 2.0])


def test_noiseless_sweep_errors():
    # velocities spread evenly over one FFT bin: quantisation RMSE stays below step / sqrt(12)
    P = 512
    step = doppler.precision(SMALL, P)
    squared = {"esprit_lo": [], "fft": []}
    for k in range(16):
        v = round(100.0 / step) * step + (k + 0.5) * step / 16
        spec = SweepSpec(SMALL, (Target(**CELL, velocity_mps=v),), (math.inf,),
                         (EstimatorSpec("esprit_lo", EstimatorConfig("esprit_lo")),
                          EstimatorSpec("fft", EstimatorConfig("fft", fft_size=P))), trials=2)
        res = run_sweep(spec)
        for name in squared:
            squared[name].append(res.row(name, math.inf).rmse_mps ** 2)
    assert math.sqrt(np.mean(squared["esprit_lo"])) <= 1e-4
    assert math.sqrt(np.mean(squared["fft"])) <= step / math.sqrt(12)


def test_two_target_point_fft_worse_than_esprit():
    spec = harness.two_target_sweep(trials=60, snr_grid_db=(15.0,), music=False)
    res = run_sweep(spec)
    assert res.row("fft_16384", 15.0).rmse_mps > res.row("esprit_lo", 15.0).rmse_mps


def test_esprit_variants_identical_rows():
    spec = harness.two_target_sweep(packets=50, trials=40, snr_grid_db=(0.0, 10.0, 20.0), music=False)
    res = run_sweep(spec)
    assert np.allclose(res.rmse("esprit_lo"), res.rmse("esprit_hi"), rtol=0, atol=1e-9)


def test_rmse_monotone_in_snr():
    grid = tuple(float(s) for s in range(-4, 26, 3))
    spec = SweepSpec(SMALL, (Target(**CELL, velocity_mps=37.0),), grid,
                     (EstimatorSpec("esprit_lo", EstimatorConfig("esprit_lo")),), trials=500)
    rmse = run_sweep(spec).rmse("esprit_lo")
    inversions = [(a, b) for a, b in zip(rmse, rmse[1:]) if b > a]
    assert len(inversions) <= 1
    assert all(b <= 1.05 * a for a, b in inversions)


def test_swapping_true_velocities_leaves_rmse_unchanged():
    los = SMALL.with_(rician_k_db=None)
    ests = (EstimatorSpec("esprit_lo", EstimatorConfig("esprit_lo", model_order=2)),
            EstimatorSpec("fft", EstimatorConfig("fft", model_order=2, fft_size=1024)))
    a = run_sweep(SweepSpec(los, pair(20.0, -40.0), (5.0, 15.0), ests, trials=30))
    b = run_sweep(SweepSpec(los, pair(-40.0, 20.0), (5.0, 15.0), ests, trials=30))
    assert [r.rmse_mps for r in a.rows] == [r.rmse_mps for r in b.rows]


def test_deterministic_and_thread_independent():
    spec = harness.two_target_sweep(packets=64, trials=12, snr_grid_db=(0.0, 20.0), base_seed=9)
    one = csv_text(run_sweep(spec, threads=1))
    assert csv_text(run_sweep(spec, threads=1)) == one
    assert csv_text(run_sweep(spec, threads=3)) == one
    other = csv_text(run_sweep(harness.two_target_sweep(packets=64, trials=12, snr_grid_db=(0.0, 20.0),
                                                        base_seed=10), threads=1))
    assert other != one


def test_failures_are_penalised(monkeypatch):
    real = doppler.estimate
    calls = {"n": 0}

    def flaky(y, cfg):
        calls["n"] += 1
        if calls["n"] % 2:
            raise SingularMatrixError("forced")
        return real(y, cfg)

    monkeypatch.setattr(doppler, "estimate", flaky)
    spec = SweepSpec(SMALL, (Target(**CELL, velocity_mps=10.0),), (30.0,),
                     (EstimatorSpec("e", EstimatorConfig("esprit_lo")),), trials=10)
    row = run_sweep(spec, threads=1).rows[0]
    assert row.failures == 5
    span = harness.failure_span(SMALL)
    assert row.rmse_mps == pytest.approx(span / math.sqrt(2), rel=1e-3)


def test_detection_rate_metric():
    spec = SweepSpec(SMALL, (Target(**CELL, velocity_mps=10.0),), (20.0,),
                     (EstimatorSpec("e", EstimatorConfig("fft", fft_size=64)),), trials=20,
                     metric="detection_rate")
    res = run_sweep(spec)
    assert res.rows[0].detection_rate == 1.0
    assert "detection_rate" in csv_text(res).splitlines()[0]


@pytest.mark.parametrize("kwargs", [dict(trials=0), dict(snr_grid_db=()), dict(metric="bias")])
def test_spec_validation(kwargs):
    base = dict(params=SMALL, targets=(Target(**CELL, velocity_mps=1.0),), snr_grid_db=(0.0,),
                estimators=(EstimatorSpec("e", EstimatorConfig()),))
    base.update(kwargs)
    with pytest.raises(ValueError):
        SweepSpec(**base)


def test_spec_rejects_order_mismatch():
    with pytest.raises(ValueError, match="model order"):
        SweepSpec(SMALL, pair(1, 2), (0.0,), (EstimatorSpec("e", EstimatorConfig()),))


def test_threads_env(monkeypatch):
    monkeypatch.setenv(harness.THREADS_ENV, "1")
    assert harness.sweep_threads() == 1
    monkeypatch.setenv(harness.THREADS_ENV, "many")
    with pytest.raises(ValueError):
        harness.sweep_threads()


# -- serialisation ----------------------------------------------------------------------

def row(name, snr, rmse=0.5):
    return SweepRow(name, "esprit_lo", 200, 2.0, 100, snr, 500, 0, rmse, 1234.5, 99.0)


def test_empty_result_is_header_only(tmp_path):
    path = emit_csv(SweepResult(), tmp_path / "e.csv")
    assert path.read_text().splitlines() == [",".join(harness.CSV_COLUMNS)]


def test_six_rows(tmp_path):
    res = SweepResult(tuple(row(n, s) for n in ("a", "b") for s in (0.0, 5.0, 10.0)))
    lines = emit_csv(res, tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 7


def test_csv_round_trip(tmp_path):
    res = SweepResult(tuple(row(n, s, rmse=1 / (3 + s)) for n in ("x", "y") for s in (-5.0, 0.1, math.inf)),
                      header=("tool 1", "scenario {\"a\": 1}"))
    assert read_csv(emit_csv(res, tmp_path / "rt.csv")) == res
    assert parse_csv(csv_text(res)) == res


def test_real_sweep_round_trip():
    res = run_sweep(harness.two_target_sweep(packets=32, trials=5, snr_grid_db=(10.0,)), header=("h",))
    assert parse_csv(csv_text(res)) == res


def test_emit_errors_carry_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        emit_csv(SweepResult(), tmp_path / "nope" / "x.csv")


def test_plotdata(tmp_path):
    res = SweepResult(tuple(row(n, s, rmse=s + 1) for n in ("a", "b") for s in (0.0, 5.0)))
    files = emit_plotdata(res, tmp_path / "plots")
    assert [f.name for f in files] == ["a.dat", "b.dat"]
    data = np.loadtxt(files[0])
    assert data.tolist() == [[0.0, 1.0], [5.0, 6.0]]


# -- complexity --------------------------------------------------------------------------

def test_complexity_lo_cheaper_at_50():
    cfg = EstimatorConfig("esprit_lo", model_order=2)
    rows = complexity_report([EstimatorSpec("hi", cfg.with_(algorithm="esprit_hi"), 50),
                              EstimatorSpec("lo", cfg, 50)], baseline="hi")
    assert rows[1].mult_ratio < 1
    assert rows[0].mult_ratio == 1.0


def test_complexity_grows_with_packets():
    cfg = EstimatorConfig("esprit_lo", model_order=2)
    rows = complexity_report([EstimatorSpec("n50", cfg, 50), EstimatorSpec("n200", cfg, 200)])
    assert rows[1].ops.complex_mults > rows[0].ops.complex_mults
    assert rows[1].ops.peak_memory_words > rows[0].ops.peak_memory_words


def test_complexity_fft_ratio():
    rows = complexity_report([EstimatorSpec("p1k", EstimatorConfig("fft", fft_size=1024), 100, 0.58e-6),
                              EstimatorSpec("p16k", EstimatorConfig("fft", fft_size=16384), 100, 0.58e-6)],
                             baseline="p16k")
    assert rows[0].mult_ratio == pytest.approx((1024 * 10) / (16384 * 14), rel=1e-12)


def test_complexity_unknown_baseline():
    with pytest.raises(KeyError):
        complexity_report([EstimatorSpec("a", EstimatorConfig())], baseline="b")
    assert complexity_report([]) == []
