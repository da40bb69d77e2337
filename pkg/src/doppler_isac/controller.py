"""Runtime selection of the Doppler estimator and its radar parameters.

A :class:`Policy` holds the selectable options and, after :func:`calibrate`,
the SNR above which each smaller packet count matches the largest one for a
given velocity separation. :func:`plan` turns a task mode and a measured SNR
into a concrete configuration; :func:`reconfigure` prices a switch.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from doppler_isac import harness, locator
from doppler_isac.doppler import EstimatorConfig, precision
from doppler_isac.harness import EstimatorSpec, SweepSpec
from doppler_isac.scene import AmbiguityCube, RadarParams, Target

POLICY_SCHEMA_VERSION = 1
MODES = ("coarse", "fine")
RATIONALES = ("coarse_default", "fine_low_snr", "fine_high_snr", "precision_request")


def _pri(t) -> float:
    # snaps away unit-conversion ulps so options compare equal after a file round trip
    return float(f"{float(t):.12g}")


@dataclass(frozen=True)
class Policy:
    """Selectable options plus calibrated switch points.

    ``snr_thresholds_db`` maps a velocity separation (m/s) to a map from a
    ``(packets, pri_s)`` option to the lowest SNR at which that option matches
    the reference option. An option missing from a bucket never qualifies.

    Attributes:
        mode: Default task mode when :func:`plan` is called without one.
        snr_thresholds_db: Calibrated switch points, see above.
        packet_options: Candidate ``(packets, pri_s)`` pairs for fine mode.
        fft_sizes: Candidate FFT lengths for coarse mode, ascending.
        reconfig_cost_ops: Charge for swapping the estimator algorithm.
        coarse_option: ``(packets, pri_s)`` used in coarse mode.
        default_precision_mps: Precision target when none is requested.
        precision_slack: A grid step meets a request when it exceeds it by at
            most this fraction of itself, so 4.2009 m/s meets 4.2 m/s and
            1.0502 m/s meets 1 m/s.
        rho: Relative RMSE tolerance used by calibration.
    """

    mode: str = "fine"
    snr_thresholds_db: dict = field(default_factory=dict)
    packet_options: tuple = ((50, 2e-6), (100, 2e-6), (200, 2e-6), (200, 0.58e-6))
    fft_sizes: tuple = (1024, 4096, 8192, 16384)
    reconfig_cost_ops: int = 1_000_000
    coarse_option: tuple = (100, 0.58e-6)
    default_precision_mps: float = 1.0
    precision_slack: float = 0.05
    rho: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        opts = tuple((int(n), _pri(t)) for n, t in self.packet_options)
        if not opts:
            raise ValueError("packet_options must not be empty")
        object.__setattr__(self, "packet_options", opts)
        object.__setattr__(self, "fft_sizes", tuple(sorted(int(p) for p in self.fft_sizes)))
        if not self.fft_sizes:
            raise ValueError("fft_sizes must not be empty")
        object.__setattr__(self, "coarse_option", (int(self.coarse_option[0]), _pri(self.coarse_option[1])))
        table = {}
        for sep, row in self.snr_thresholds_db.items():
            clean = {(int(o[0]), _pri(o[1])): float(s) for o, s in row.items()}
            if not all(math.isfinite(s) for s in clean.values()):
                raise ValueError(f"thresholds must be finite, got {row} for separation {sep}")
            table[float(sep)] = clean
        object.__setattr__(self, "snr_thresholds_db", table)
        if self.reconfig_cost_ops < 0 or self.rho < 0 or self.precision_slack < 0:
            raise ValueError("costs and tolerances must be non-negative")

    @property
    def reference_option(self) -> tuple:
        """The option every other one is compared with: most packets, then longest CPI."""
        return max(self.packet_options, key=lambda o: (o[0], o[0] * o[1]))

    def with_(self, **changes) -> Policy:
        return replace(self, **changes)


@dataclass(frozen=True)
class PlanDecision:
    config: EstimatorConfig
    packets: int
    pri_s: float
    rationale: str
    predicted_latency_ops: int
    bucket_mps: float | None = None

    def as_dict(self) -> dict:
        c = self.config
        return {
            "algorithm": c.algorithm,
            "packets": self.packets,
            "pri_us": self.pri_s * 1e6,
            "fft_size": c.fft_size if c.algorithm == "fft" else None,
            "smoothing_len": c.smoothing_for(self.packets) if c.algorithm != "fft" else None,
            "order": c.model_order,
            "rationale": self.rationale,
            "predicted_latency_ops": self.predicted_latency_ops,
            "bucket_mps": self.bucket_mps,
        }


# -- policy files ----------------------------------------------------------------

def _option_key(option) -> str:
    return f"{option[0]}@{option[1] * 1e6!r}us"


def _parse_option_key(key: str) -> tuple:
    try:
        n, pri = key.removesuffix("us").split("@")
        return int(n), float(pri) * 1e-6
    except ValueError:
        raise ValueError(f"bad option key {key!r}; expected '<packets>@<pri_us>us'") from None


def policy_to_dict(policy: Policy) -> dict:
    return {
        "schema_version": POLICY_SCHEMA_VERSION,
        "mode": policy.mode,
        "snr_thresholds_db": {repr(sep): {_option_key(o): s for o, s in sorted(row.items())}
                              for sep, row in sorted(policy.snr_thresholds_db.items())},
        "packet_options": [{"packets": n, "pri_us": t * 1e6} for n, t in policy.packet_options],
        "fft_sizes": list(policy.fft_sizes),
        "reconfig_cost_ops": policy.reconfig_cost_ops,
        "coarse_option": {"packets": policy.coarse_option[0], "pri_us": policy.coarse_option[1] * 1e6},
        "default_precision_mps": policy.default_precision_mps,
        "precision_slack": policy.precision_slack,
        "rho": policy.rho,
    }


def policy_from_dict(doc: dict) -> Policy:
    version = doc.get("schema_version") if isinstance(doc, dict) else None
    if version != POLICY_SCHEMA_VERSION:
        raise ValueError(f"unsupported policy schema_version {version!r}; expected {POLICY_SCHEMA_VERSION}")
    try:
        kwargs = {
            "mode": doc.get("mode", "fine"),
            "snr_thresholds_db": {float(k): {_parse_option_key(o): s for o, s in v.items()}
                                  for k, v in doc.get("snr_thresholds_db", {}).items()},
            "packet_options": tuple((o["packets"], o["pri_us"] * 1e-6) for o in doc["packet_options"]),
        }
        if "coarse_option" in doc:
            kwargs["coarse_option"] = (doc["coarse_option"]["packets"], doc["coarse_option"]["pri_us"] * 1e-6)
        for key in ("fft_sizes", "reconfig_cost_ops", "default_precision_mps", "precision_slack", "rho"):
            if key in doc:
                kwargs[key] = doc[key]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed policy document: {exc!r}") from None
    return Policy(**kwargs)


def save_policy(policy: Policy, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(policy_to_dict(policy), indent=2) + "\n")
    return path


def load_policy(path) -> Policy:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from None
    return policy_from_dict(doc)


# -- planning --------------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def predicted_ops(config: EstimatorConfig, packets: int, pri_s: float) -> int:
    """Complex multiplications of one run on the fixed reference input."""
    spec = EstimatorSpec("plan", config, packets, pri_s)
    (row,) = harness.complexity_report([spec])
    return int(row.ops.complex_mults)


def _bucket(policy: Policy, separation_hint: float | None) -> float | None:
    seps = sorted(policy.snr_thresholds_db)
    if not seps:
        return None
    if separation_hint is None:
        return seps[0]
    fitting = [s for s in seps if s <= separation_hint]
    return fitting[-1] if fitting else seps[0]


def plan(mode: str | None, snr_estimate_db: float, target_separation_hint_mps: float | None = None,
         policy: Policy | None = None, *, precision_mps: float | None = None,
         model_order: int = 2) -> PlanDecision:
    """Pick an estimator configuration for ``mode`` at the measured SNR.

    Coarse mode takes the smallest FFT whose grid step meets the requested
    precision (or the policy default). Fine mode takes ``esprit_lo`` with the
    fewest packets whose calibrated switch point, for the separation bucket
    at or below the hint, is at or below ``snr_estimate_db``; if none
    qualifies it falls back to the reference (largest) option.
    """
    policy = policy or Policy()
    mode = mode or policy.mode
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")

    if mode == "coarse":
        packets, pri = policy.coarse_option
        want = policy.default_precision_mps if precision_mps is None else precision_mps
        if want <= 0:
            raise ValueError(f"precision must be positive, got {want}")
        params = RadarParams(packets=packets, pri_s=pri)
        sizes = [p for p in policy.fft_sizes if p >= packets]
        if not sizes:
            raise ValueError(f"no FFT size in {policy.fft_sizes} covers {packets} packets")
        meets = [p for p in sizes
                 if precision(params, p) - want <= policy.precision_slack * precision(params, p)]
        size = meets[0] if meets else sizes[-1]
        cfg = EstimatorConfig("fft", fft_size=size, model_order=1)
        rationale = "coarse_default" if precision_mps is None else "precision_request"
        return PlanDecision(cfg, packets, pri, rationale, predicted_ops(cfg, packets, pri))

    cfg = EstimatorConfig("esprit_lo", model_order=model_order)
    ref = policy.reference_option
    bucket = _bucket(policy, target_separation_hint_mps)
    chosen, rationale = ref, "fine_low_snr"
    if bucket is not None and not math.isnan(snr_estimate_db):
        row = policy.snr_thresholds_db[bucket]
        for option in sorted(policy.packet_options, key=lambda o: (o[0], o[0] * o[1])):
            if option == ref:
                break
            threshold = row.get(option)
            if threshold is not None and snr_estimate_db >= threshold:
                chosen, rationale = option, "fine_high_snr"
                break
    packets, pri = chosen
    return PlanDecision(cfg, packets, pri, rationale, predicted_ops(cfg, packets, pri), bucket)


def reconfigure(current: EstimatorConfig, next_config: EstimatorConfig, policy: Policy | None = None) -> int:
    """Cost of moving from ``current`` to ``next_config``: a full swap only when the algorithm changes."""
    policy = policy or Policy()
    return policy.reconfig_cost_ops if current.algorithm != next_config.algorithm else 0


def measure_snr_db(cube: AmbiguityCube) -> float:
    """SNR estimate at the strongest cell of the packet-averaged map."""
    det = locator.peak_search(cube, coherent_avg=True)
    return locator.estimate_snr_db(cube, det)


# -- calibration -----------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationGrid:
    separations_mps: tuple = (2.0, 4.0, 8.0)
    snr_grid_db: tuple = harness.SNR_GRID_DB
    trials: int = 500
    base_velocity_mps: float = 10.0
    base_seed: int = 0
    radar: RadarParams = harness.SWEEP_RADAR
    cell: Target = harness.SWEEP_CELL


@dataclass(frozen=True)
class Calibration:
    policy: Policy
    curves: dict  # (separation, (packets, pri_s)) -> tuple of RMSE over the grid
    snr_grid_db: tuple
    report: str


def switch_point(snr_grid, small_rmse, large_rmse, rho: float, floor_mps: float = 0.0) -> float | None:
    """Lowest grid SNR from which the small option stays within tolerance at every higher SNR.

    Tolerance is ``max((1 + rho) * large, floor_mps)``. ``None`` if even the
    top of the grid fails.
    """
    found = None
    for snr, small, large in sorted(zip(snr_grid, small_rmse, large_rmse), reverse=True):
        if small <= max((1.0 + rho) * large, floor_mps):
            found = snr
        else:
            break
    return found


def calibrate(policy_template: Policy, scenario_grid: CalibrationGrid | None = None, *,
              floor_mps: float = 0.0, threads: int | None = None) -> Calibration:
    """Measure ESPRIT RMSE per packet option and separation, and derive switch points.

    A single-option policy is returned unchanged. ``floor_mps`` is an
    absolute RMSE below which an option counts as good enough regardless of
    ``rho``; it defaults to zero (purely relative tolerance).
    """
    grid = scenario_grid or CalibrationGrid()
    options = policy_template.packet_options
    if len(options) < 2:
        return Calibration(policy_template, {}, tuple(grid.snr_grid_db), "single option: nothing to calibrate")
    ref = policy_template.reference_option
    cfg = EstimatorConfig("esprit_lo", model_order=2)
    names = {o: f"N{o[0]}_T{o[1] * 1e6:g}us" for o in options}
    thresholds: dict[float, dict[tuple, float]] = {}
    curves = {}
    for sep in grid.separations_mps:
        targets = (replace(grid.cell, velocity_mps=grid.base_velocity_mps),
                   replace(grid.cell, velocity_mps=grid.base_velocity_mps + sep))
        spec = SweepSpec(
            params=grid.radar, targets=targets, snr_grid_db=grid.snr_grid_db,
            estimators=tuple(EstimatorSpec(names[o], cfg, o[0], o[1]) for o in options),
            trials=grid.trials, base_seed=grid.base_seed)
        result = harness.run_sweep(spec, threads=threads)
        snrs = [r.snr_db for r in result.series(names[ref])]
        for o in options:
            curves[(sep, o)] = tuple(result.rmse(names[o]))
        row = {}
        for o in options:
            if o == ref:
                continue
            s = switch_point(snrs, curves[(sep, o)], curves[(sep, ref)], policy_template.rho, floor_mps)
            if s is not None:
                row[o] = s
        thresholds[float(sep)] = row
    policy = policy_template.with_(snr_thresholds_db=thresholds)
    return Calibration(policy, curves, tuple(float(s) for s in grid.snr_grid_db),
                       calibration_report(policy, curves, grid.snr_grid_db, floor_mps))


def calibration_report(policy: Policy, curves: dict, snr_grid, floor_mps: float = 0.0) -> str:
    lines = [f"reference option: N={policy.reference_option[0]} "
             f"PRI={policy.reference_option[1] * 1e6:g} us; rho={policy.rho:g}; floor={floor_mps:g} m/s"]
    for sep in sorted(policy.snr_thresholds_db):
        lines.append(f"separation {sep:g} m/s")
        for (s, o), rmse in sorted(curves.items()):
            if s != sep:
                continue
            values = " ".join(f"{snr:g}:{r:.4g}" for snr, r in zip(snr_grid, rmse))
            lines.append(f"  N={o[0]:<4d} PRI={o[1] * 1e6:<5g} us  rmse {values}")
        row = policy.snr_thresholds_db[sep]
        for o in policy.packet_options:
            if o == policy.reference_option:
                continue
            t = row.get(o)
            lines.append(f"  switch to N={o[0]} PRI={o[1] * 1e6:g} us: " + (f"SNR >= {t:g} dB" if t is not None else "never on this grid"))
    return "\n".join(lines)
