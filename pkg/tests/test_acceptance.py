"""Acceptance criteria, each at its stated tolerance. Every test records one PASS/FAIL line."""

import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from doppler_isac import harness
from doppler_isac.controller import CalibrationGrid, Policy, calibrate, plan
from doppler_isac.doppler import EstimatorConfig, esprit, fft_doppler, pinv_normal, pinv_svd, precision, resolution
from doppler_isac.harness import EstimatorSpec, assignment_error, complexity_report, run_sweep
from doppler_isac.locator import SlowTimeVector
from doppler_isac.scene import RadarParams

from conftest import crandn
from oracles import tone

pytestmark = pytest.mark.acceptance

TESTS = Path(__file__).resolve().parent


def fmt(values):
    return " ".join(f"{v:.3g}" for v in values)


def test_c1_precision_formula(verdict):
    p = RadarParams(wavelength_m=4.99e-3, pri_s=0.58e-6)
    computed = {P: precision(p, P) for P in (1024, 4096, 16384)}
    stated = {1024: 4.2, 4096: 1.05, 16384: 0.26}
    table = {1024: (4.2, 1), 4096: (1.0, 0), 16384: (0.3, 1)}  # value, displayed decimals
    rel = {P: abs(computed[P] - stated[P]) / stated[P] for P in computed}
    rounds = all(round(computed[P], d) == v for P, (v, d) in table.items())
    ok = max(rel.values()) <= 0.05 and rounds
    verdict("1 precision", ok, f"computed {fmt(computed.values())} m/s; max rel err vs 4.2/1.05/0.26 "
                               f"{max(rel.values()):.2%}; rounds to 4.2/1/0.3: {rounds}")


def test_c2_pseudo_inverse_equivalence(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(10_000):
        L = (8, 16, 32, 64)[i % 4]
        e2 = crandn(rng, L - 1, 2)
        a, b = pinv_normal(e2), pinv_svd(e2)
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(b))
    params = RadarParams(wavelength_m=4.99e-3, pri_s=2e-6)
    lo = EstimatorConfig("esprit_lo", model_order=2)
    hi = lo.with_(algorithm="esprit_hi")
    gap = 0.0
    for _ in range(1000):
        v = rng.uniform(-300, 300)
        sep = rng.uniform(1, 50)
        n = int(rng.choice([50, 100, 200]))
        y = tone(v, n, 2e-6, 4.99e-3) + tone(v + sep, n, 2e-6, 4.99e-3) + 0.3 * crandn(rng, n)
        stv = SlowTimeVector.from_samples(y, params)
        gap = max(gap, np.max(np.abs(esprit(stv, lo).velocities_mps - esprit(stv, hi).velocities_mps)))
    ok = worst <= 1e-9 and gap <= 1e-9
    verdict("2 pinv equivalence", ok, f"max rel Frobenius {worst:.2e}; max velocity gap {gap:.2e} m/s")


def test_c3_two_target_ordering(verdict):
    res = run_sweep(harness.two_target_sweep(trials=500))
    lo, fft = res.rmse("esprit_lo"), res.rmse("fft_16384")
    grid = harness.SNR_GRID_DB
    ordered = all(a < b for s, a, b in zip(grid, lo, fft) if s >= 0)
    saturated = all(a <= 1.0 for s, a in zip(grid, lo) if s >= 15)
    verdict("3 two-target sweep", ordered and saturated,
            f"esprit_lo {fmt(lo)}; fft {fmt(fft)} m/s over {list(grid)} dB")


def test_c4_equal_cpi(verdict):
    res = run_sweep(harness.cpi_pair_sweep(trials=500))
    a, b = (res.rmse(n) for n in res.estimators)
    ratios = [max(x, y) / min(x, y) for s, x, y in zip(harness.SNR_GRID_DB, a, b) if s >= 5]
    verdict("4 equal-CPI options", max(ratios) <= 1.15,
            f"{res.estimators[0]} {fmt(a)}; {res.estimators[1]} {fmt(b)}; worst ratio at >=5 dB {max(ratios):.3g}")


def test_c5_coarse_parity(verdict):
    res = run_sweep(harness.coarse_sweep(trials=500))
    e, f, m = res.rmse("esprit_lo"), res.rmse("fft_16384"), res.rmse("music_16384")
    dev_f = max(abs(x - y) / y for x, y in zip(f, e))
    dev_m = max(abs(x - y) / y for x, y in zip(m, e))
    verdict("5 coarse parity", dev_f <= 0.10 and dev_m <= 0.10,
            f"esprit {fmt(e)}; fft {fmt(f)}; music {fmt(m)}; max dev fft {dev_f:.1%} music {dev_m:.1%}")


def test_c6_complexity_direction(verdict):
    cfg = EstimatorConfig("esprit_lo", model_order=2)
    details, ok = [], True
    for n in (50, 200):
        rows = complexity_report([EstimatorSpec("hi", cfg.with_(algorithm="esprit_hi"), n, 2e-6),
                                  EstimatorSpec("lo", cfg, n, 2e-6)], baseline="hi")
        hi, lo = rows[0].ops, rows[1].ops
        ok &= lo.complex_mults < hi.complex_mults and lo.peak_memory_words < hi.peak_memory_words
        cut = 1 - lo.peak_memory_words / hi.peak_memory_words
        if n == 200:
            ok &= cut >= 0.5
        details.append(f"N={n} mults {lo.complex_mults}/{hi.complex_mults} memory cut {cut:.0%}")
    verdict("6 complexity direction", ok, "; ".join(details))


def test_c7_controller_switching(verdict):
    small, large = (50, 2e-6), (200, 2e-6)
    cal = calibrate(Policy(packet_options=(small, large)), CalibrationGrid(separations_mps=(2.0, 4.0, 8.0)))
    high = max(cal.snr_grid_db)
    hint = max(cal.policy.snr_thresholds_db)
    chosen = plan("fine", high, hint, cal.policy)
    reference = plan("fine", -math.inf, hint, cal.policy)
    latency = chosen.predicted_latency_ops / reference.predicted_latency_ops
    consistent = True
    for sep, row in cal.policy.snr_thresholds_db.items():
        for option, snr in row.items():
            i = cal.snr_grid_db.index(snr)
            consistent &= cal.curves[(sep, option)][i] <= 1.1 * cal.curves[(sep, large)][i]
    switches = {s: r.get(small) for s, r in cal.policy.snr_thresholds_db.items()}
    ok = chosen.packets == 50 and latency <= 0.55 and consistent
    curves = "; ".join(f"sep {s:g}: N50 {fmt(cal.curves[(s, small)])} N200 {fmt(cal.curves[(s, large)])}"
                       for s in sorted(switches))
    verdict("7 controller switching", ok,
            f"plan at {high:g} dB picks N={chosen.packets} (latency ratio {latency:.2f}); "
            f"switch points {switches}; {curves}")


def test_c8_property_suites_and_super_resolution(verdict):
    suites = [str(TESTS / f"test_{m}.py") for m in ("numlin", "scene", "locator", "doppler", "harness")]
    run = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *suites],
                         capture_output=True, text=True, cwd=TESTS.parent)
    summary = run.stdout.strip().splitlines()[-1] if run.stdout.strip() else run.stderr[-200:]

    params = RadarParams(packets=200, pri_s=2e-6, wavelength_m=4.99e-3)
    sep = 0.5 * resolution(params)
    truth = [20.0, 20.0 + sep]
    y = SlowTimeVector.from_samples(tone(truth[0], 200, 2e-6, 4.99e-3) + tone(truth[1], 200, 2e-6, 4.99e-3),
                                    params)
    cfg = EstimatorConfig("esprit_lo", model_order=2)
    err_esprit = math.sqrt(assignment_error(esprit(y, cfg).velocities_mps, truth))
    fft = fft_doppler(y, cfg.with_(algorithm="fft", fft_size=16384))
    err_fft = math.sqrt(assignment_error(fft.velocities_mps, truth))
    resolved = err_esprit <= 1e-4 and err_fft > sep / 4
    verdict("8 properties and super-resolution", run.returncode == 0 and resolved,
            f"property suites: {summary}; separation {sep:.3g} m/s: esprit rms err {err_esprit:.1e}, "
            f"fft rms err {err_fft:.3g}")
