"""Monte Carlo RMSE sweeps, complexity reports and result serialisation.

Every trial is keyed by ``(base_seed, trial)``: the fading and noise of trial
``t`` are the same for every estimator and every SNR point (common random
numbers), and serial and threaded runs give identical results.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from doppler_isac import doppler, locator
from doppler_isac.doppler import EstimatorConfig
from doppler_isac.numlin import NumlinError, OpCounter
from doppler_isac.scene import RadarParams, Target, synthesize_cube

CSV_COLUMNS = ("estimator", "algorithm", "N", "pri_us", "P_or_L", "snr_db", "trials",
               "failures", "rmse_mps", "complex_mults", "mem_words")
METRICS = ("rmse", "detection_rate")
THREADS_ENV = "DOPPLER_ISAC_THREADS"


@dataclass(frozen=True)
class EstimatorSpec:
    """A named estimator, optionally with its own packet count and PRI."""

    name: str
    config: EstimatorConfig
    packets: int | None = None
    pri_s: float | None = None

    def params_for(self, base: RadarParams) -> RadarParams:
        changes = {}
        if self.packets is not None:
            changes["packets"] = self.packets
        if self.pri_s is not None:
            changes["pri_s"] = self.pri_s
        return base.with_(**changes) if changes else base

    def size_label(self, packets: int) -> int:
        """FFT length for ``fft``, smoothing length otherwise."""
        if self.config.algorithm == "fft":
            return self.config.fft_size
        return self.config.smoothing_for(packets)


@dataclass(frozen=True)
class SweepSpec:
    params: RadarParams
    targets: tuple
    snr_grid_db: tuple
    estimators: tuple
    trials: int = 500
    base_seed: int = 0
    metric: str = "rmse"
    coherent_avg: bool = True

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.targets or not self.snr_grid_db or not self.estimators:
            raise ValueError("targets, snr_grid_db and estimators must be non-empty")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ValueError(f"estimator names must be unique, got {names}")
        for e in self.estimators:
            if e.config.model_order != len(self.targets):
                raise ValueError(
                    f"estimator {e.name!r} has model order {e.config.model_order} "
                    f"but the scene has {len(self.targets)} targets")


@dataclass(frozen=True)
class SweepRow:
    estimator: str
    algorithm: str
    N: int
    pri_us: float
    P_or_L: int
    snr_db: float
    trials: int
    failures: int
    rmse_mps: float
    complex_mults: float
    mem_words: float
    detection_rate: float | None = None


@dataclass(frozen=True)
class SweepResult:
    rows: tuple = ()
    header: tuple = ()

    def row(self, estimator: str, snr_db: float) -> SweepRow:
        for r in self.rows:
            if r.estimator == estimator and r.snr_db == snr_db:
                return r
        raise KeyError((estimator, snr_db))

    def series(self, estimator: str) -> list[SweepRow]:
        return sorted((r for r in self.rows if r.estimator == estimator), key=lambda r: r.snr_db)

    def rmse(self, estimator: str) -> np.ndarray:
        return np.array([r.rmse_mps for r in self.series(estimator)])

    @property
    def estimators(self) -> list[str]:
        return list(dict.fromkeys(r.estimator for r in self.rows))


def assignment_error(estimates, truth) -> float:
    """Mean squared error under the best matching of estimates to truth."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"{est.size} estimates for {tru.size} true velocities")
    return min(float(np.mean((est[list(p)] - tru) ** 2))
               for p in itertools.permutations(range(est.size)))


def failure_span(params: RadarParams) -> float:
    """Error charged per velocity for a failed estimate: the full unambiguous span."""
    return params.wavelength_m / (2.0 * params.pri_s)


def _true_cell(params: RadarParams, target: Target) -> tuple[int, int]:
    return (int(round(params.range_bin(target.range_m))),
            int(round(params.angle_bin(target.azimuth_rad))))


def _trial(spec: SweepSpec, groups, trial: int):
    """Squared errors, failures, detections and op counts of one trial.

    Returns arrays indexed ``[estimator, snr]``.
    """
    n_est, n_snr = len(spec.estimators), len(spec.snr_grid_db)
    sq = np.zeros((n_est, n_snr))
    fail = np.zeros((n_est, n_snr), dtype=np.int64)
    hit = np.zeros((n_est, n_snr), dtype=np.int64)
    mults = np.zeros((n_est, n_snr))
    words = np.zeros((n_est, n_snr))
    truth = np.array([t.velocity_mps for t in spec.targets])
    for params, members in groups:
        cell = _true_cell(params, spec.targets[0])
        for j, snr in enumerate(spec.snr_grid_db):
            cube = synthesize_cube(spec.targets, params.with_(snr_db=snr), trial=trial)
            det = locator.peak_search(cube, coherent_avg=spec.coherent_avg)
            y = locator.extract_slow_time(cube, det)
            detected = (det.range_bin, det.angle_bin) == cell
            for i in members:
                hit[i, j] = detected
                try:
                    est = doppler.estimate(y, spec.estimators[i].config)
                except (NumlinError, ArithmeticError, ValueError):
                    fail[i, j] = 1
                    sq[i, j] = failure_span(params) ** 2
                    continue
                sq[i, j] = assignment_error(est.velocities_mps, truth)
                mults[i, j] = est.ops.complex_mults
                words[i, j] = est.ops.peak_memory_words
    return sq, fail, hit, mults, words


def sweep_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        cap = int(raw) if raw else os.cpu_count() or 1
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(cap, os.cpu_count() or 1))


def run_sweep(spec: SweepSpec, *, threads: int | None = None, header=()) -> SweepResult:
    """Monte Carlo sweep over every (estimator, SNR) pair of ``spec``.

    Trials run on up to ``threads`` workers (default: ``DOPPLER_ISAC_THREADS``
    capped at the CPU count). Aggregation is a plain sum in trial order, so
    the result does not depend on the thread count.
    """
    base = spec.params.with_(rng_seed=spec.base_seed)
    groups: dict[RadarParams, list[int]] = {}
    for i, e in enumerate(spec.estimators):
        groups.setdefault(e.params_for(base), []).append(i)
    group_list = list(groups.items())

    threads = sweep_threads() if threads is None else max(1, threads)
    if threads == 1:
        outs = [_trial(spec, group_list, t) for t in range(spec.trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(lambda t: _trial(spec, group_list, t), range(spec.trials)))
    sq, fail, hit, mults, words = (np.sum(np.stack(x), axis=0) for x in zip(*outs))

    rows = []
    for i, e in enumerate(spec.estimators):
        params = e.params_for(base)
        for j, snr in enumerate(spec.snr_grid_db):
            ok = spec.trials - int(fail[i, j])
            rows.append(SweepRow(
                estimator=e.name,
                algorithm=e.config.algorithm,
                N=params.packets,
                pri_us=params.pri_s * 1e6,
                P_or_L=e.size_label(params.packets),
                snr_db=snr,
                trials=spec.trials,
                failures=int(fail[i, j]),
                rmse_mps=math.sqrt(sq[i, j] / spec.trials),
                complex_mults=float(mults[i, j] / ok) if ok else 0.0,
                mem_words=float(words[i, j] / ok) if ok else 0.0,
                detection_rate=float(hit[i, j] / spec.trials) if spec.metric == "detection_rate" else None,
            ))
    return SweepResult(tuple(rows), tuple(header))


# -- complexity ---------------------------------------------------------------

@dataclass(frozen=True)
class ComplexityRow:
    name: str
    algorithm: str
    N: int
    pri_us: float
    P_or_L: int
    ops: OpCounter = field(default_factory=OpCounter)
    mult_ratio: float = 1.0
    mem_ratio: float = 1.0


def reference_input(params: RadarParams, velocities=(3.0, -3.0), snr_db: float = 20.0,
                    seed: int = 12345) -> locator.SlowTimeVector:
    """Fixed noisy multi-tone slow-time vector used for operation counting."""
    n = np.arange(params.packets)
    y = np.zeros(params.packets, dtype=np.complex128)
    for v in velocities:
        y += np.exp(-1j * 4.0 * math.pi * v * params.pri_s / params.wavelength_m * n)
    rng = np.random.Generator(np.random.Philox(seed))
    sigma = math.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
    y += sigma * (rng.standard_normal(params.packets) + 1j * rng.standard_normal(params.packets))
    return locator.SlowTimeVector(y, params)


def complexity_report(configs, baseline: str | None = None,
                      params: RadarParams | None = None) -> list[ComplexityRow]:
    """Operation counts of one run per estimator on a fixed reference input.

    Ratios are taken against the entry named ``baseline`` (default: the first).
    """
    configs = list(configs)
    if not configs:
        return []
    params = params or RadarParams()
    measured = []
    for e in configs:
        p = e.params_for(params)
        k = e.config.model_order
        y = reference_input(p, velocities=(3.0, -3.0)[:k] if k == 2 else (3.0,))
        est = doppler.estimate(y, e.config)
        measured.append((e, p, est.ops))
    names = [e.name for e, _, _ in measured]
    ref_name = baseline if baseline is not None else names[0]
    if ref_name not in names:
        raise KeyError(f"baseline {ref_name!r} not among {names}")
    ref = measured[names.index(ref_name)][2]
    return [
        ComplexityRow(e.name, e.config.algorithm, p.packets, p.pri_s * 1e6, e.size_label(p.packets), ops,
                      ops.complex_mults / ref.complex_mults if ref.complex_mults else math.nan,
                      ops.peak_memory_words / ref.peak_memory_words if ref.peak_memory_words else math.nan)
        for e, p, ops in measured
    ]


def format_complexity(rows) -> str:
    head = f"{'name':<18}{'algorithm':<11}{'N':>5}{'pri_us':>8}{'P_or_L':>8}" \
           f"{'mults':>12}{'mem_words':>11}{'mult_ratio':>12}{'mem_ratio':>11}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.name:<18}{r.algorithm:<11}{r.N:>5}{r.pri_us:>8.3g}{r.P_or_L:>8}"
                     f"{r.ops.complex_mults:>12}{r.ops.peak_memory_words:>11}"
                     f"{r.mult_ratio:>12.3f}{r.mem_ratio:>11.3f}")
    return "\n".join(lines)


# -- serialisation --------------------------------------------------------------

def _columns(result: SweepResult) -> tuple:
    if any(r.detection_rate is not None for r in result.rows):
        return CSV_COLUMNS + ("detection_rate",)
    return CSV_COLUMNS


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(result: SweepResult) -> str:
    buf = io.StringIO()
    for line in result.header:
        buf.write(f"# {line}\n")
    cols = _columns(result)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in result.rows:
        writer.writerow([_cell(getattr(r, c)) for c in cols])
    return buf.getvalue()


def emit_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    try:
        path.write_text(csv_text(result))
    except OSError as exc:
        raise OSError(f"cannot write sweep CSV to {path}: {exc.strerror or exc}") from exc
    return path


_CASTS = {"estimator": str, "algorithm": str, "N": int, "pri_us": float, "P_or_L": int,
          "snr_db": float, "trials": int, "failures": int, "rmse_mps": float,
          "complex_mults": float, "mem_words": float, "detection_rate": float}


def parse_csv(text: str) -> SweepResult:
    lines = text.splitlines()
    header = tuple(line[2:] if line.startswith("# ") else line[1:] for line in lines if line.startswith("#"))
    body = [line for line in lines if not line.startswith("#")]
    reader = csv.DictReader(body)
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"sweep CSV is missing columns {sorted(missing)}")
    rows = tuple(SweepRow(**{k: _CASTS[k](v) for k, v in rec.items()}) for rec in reader)
    return SweepResult(rows, header)


def read_csv(path) -> SweepResult:
    return parse_csv(Path(path).read_text())


def emit_plotdata(result: SweepResult, directory, metric: str = "rmse") -> list[Path]:
    """One two-column ``snr_db value`` file per estimator, named ``<estimator>.dat``."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    directory = Path(directory)
    column = "rmse_mps" if metric == "rmse" else "detection_rate"
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name in result.estimators:
            path = directory / f"{name}.dat"
            lines = [f"# snr_db {column}"]
            lines += [f"{r.snr_db!r} {getattr(r, column)!r}" for r in result.series(name)]
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write plot data under {directory}: {exc.strerror or exc}") from exc
    return written



# -- reference sweeps ----------------------------------------------------------

SNR_GRID_DB = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0)

# small range-azimuth grid; detection cost scales with its area
SWEEP_RADAR = RadarParams(range_bins=32, angle_bins=16)
SWEEP_CELL = Target(range_m=10 * 0.085, azimuth_rad=0.0, velocity_mps=0.0)


def _co_located(velocities) -> tuple:
    return tuple(replace(SWEEP_CELL, velocity_mps=float(v)) for v in velocities)


def coarse_sweep(packets: int = 100, pri_s: float = 0.58e-6, velocity: float = 10.3,
                 points: int = 16384, trials: int = 500, snr_grid_db=SNR_GRID_DB,
                 base_seed: int = 0) -> SweepSpec:
    """One target; ESPRIT against FFT and MUSIC on ``points``-point grids."""
    return SweepSpec(
        params=SWEEP_RADAR.with_(packets=packets, pri_s=pri_s),
        targets=_co_located([velocity]),
        snr_grid_db=snr_grid_db,
        estimators=(
            EstimatorSpec("esprit_lo", EstimatorConfig("esprit_lo")),
            EstimatorSpec(f"fft_{points}", EstimatorConfig("fft", fft_size=points)),
            EstimatorSpec(f"music_{points}", EstimatorConfig("music", search_grid=points)),
        ),
        trials=trials, base_seed=base_seed)


def two_target_sweep(separation: float = 6.0, packets: int = 200, pri_s: float = 2e-6,
                     base_velocity: float = 10.0, fft_size: int = 16384, trials: int = 500,
                     snr_grid_db=SNR_GRID_DB, base_seed: int = 0, music: bool = True) -> SweepSpec:
    """Two co-located movers ``separation`` apart: ESPRIT (both variants), MUSIC, FFT."""
    cfg = EstimatorConfig("esprit_lo", model_order=2)
    ests = [
        EstimatorSpec("esprit_lo", cfg),
        EstimatorSpec("esprit_hi", cfg.with_(algorithm="esprit_hi")),
        EstimatorSpec(f"fft_{fft_size}", cfg.with_(algorithm="fft", fft_size=fft_size)),
    ]
    if music:
        ests.append(EstimatorSpec("music", cfg.with_(algorithm="music", search_grid=fft_size)))
    return SweepSpec(
        params=SWEEP_RADAR.with_(packets=packets, pri_s=pri_s),
        targets=_co_located([base_velocity, base_velocity + separation]),
        snr_grid_db=snr_grid_db, estimators=tuple(ests), trials=trials, base_seed=base_seed)


def cpi_pair_sweep(options=((200, 0.58e-6), (50, 2e-6)), separation: float = 6.0,
                   base_velocity: float = 10.0, trials: int = 500, snr_grid_db=SNR_GRID_DB,
                   base_seed: int = 0) -> SweepSpec:
    """ESPRIT at several (packets, PRI) options for the same pair of movers."""
    cfg = EstimatorConfig("esprit_lo", model_order=2)
    ests = tuple(EstimatorSpec(f"esprit_lo_N{n}_T{t * 1e6:g}us", cfg, packets=n, pri_s=t) for n, t in options)
    return SweepSpec(
        params=SWEEP_RADAR,
        targets=_co_located([base_velocity, base_velocity + separation]),
        snr_grid_db=snr_grid_db, estimators=ests, trials=trials, base_seed=base_seed)
