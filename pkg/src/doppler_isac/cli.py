"""Command-line entry point: ``doppler-isac <verb> [options]``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from doppler_isac import __version__, controller, doppler, harness, locator
from doppler_isac.doppler import ALGORITHMS, EstimatorConfig
from doppler_isac.harness import EstimatorSpec, SweepSpec
from doppler_isac.scene import (Scenario, ScenarioError, load_scenario, parse_scenario,
                                scenario_to_dict, synthesize_cube)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def _add_overrides(p: argparse.ArgumentParser, *, scenario_required: bool = True) -> None:
    p.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
    p.add_argument("--out", help="output file")
    p.add_argument("--seed", type=int, help="override radar.rng_seed (and the sweep base seed)")
    p.add_argument("--snr-db", type=float, help="override channel.snr_db (a one-point grid for sweeps)")
    p.add_argument("--packets", type=int, help="override radar.packets")
    p.add_argument("--pri-us", type=float, help="override radar.pri_us")
    p.add_argument("--algorithm", choices=ALGORITHMS, help="estimator algorithm")
    p.add_argument("--fft-size", type=int, help="FFT length P")
    p.add_argument("--smoothing-len", type=int, help="smoothing length L")
    p.add_argument("--order", type=int, help="model order K (1 or 2)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any scenario field; VALUE is parsed as JSON (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doppler-isac",
        description="Doppler velocity estimation for TDM ISAC radar: simulate scenes, "
                    "estimate velocities, run RMSE sweeps, calibrate and query the controller.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("simulate", help="synthesize an ambiguity cube (.npz)")
    _add_overrides(p)
    p.add_argument("--trial", type=int, default=0, help="trial index of the random streams")

    p = sub.add_parser("estimate", help="detect the strongest cell and estimate its velocities")
    _add_overrides(p)
    p.add_argument("--trial", type=int, default=0, help="trial index of the random streams")
    p.add_argument("--n-ref", type=int, help="detect on this packet instead of the packet average")

    p = sub.add_parser("sweep", help="Monte Carlo RMSE sweep to CSV")
    _add_overrides(p)
    p.add_argument("--trials", type=int, help="override sweep.trials")
    p.add_argument("--plotdata", help="directory for per-estimator 'snr_db rmse_mps' files")

    p = sub.add_parser("calibrate", help="derive controller switch points and write a policy")
    _add_overrides(p, scenario_required=False)
    p.add_argument("--separations", default="2,4,8", help="velocity separations in m/s, comma separated")
    p.add_argument("--options", default="50@2,200@2", help="packet options as N@PRI_us, comma separated")
    p.add_argument("--snr-grid", default="-5,0,5,10,15,20,25", help="SNR grid in dB, comma separated")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--rho", type=float, default=0.1, help="relative RMSE tolerance")
    p.add_argument("--floor", type=float, default=0.0, help="absolute RMSE tolerance floor in m/s")

    p = sub.add_parser("complexity", help="operation counts per estimator configuration")
    _add_overrides(p, scenario_required=False)
    p.add_argument("--baseline", help="estimator name used for the ratio columns")

    p = sub.add_parser("plan", help="choose an estimator configuration for a task and SNR")
    p.add_argument("--mode", choices=controller.MODES, required=True)
    p.add_argument("--snr-db", type=float, required=True)
    p.add_argument("--policy", help="policy JSON from 'calibrate' (default: uncalibrated policy)")
    p.add_argument("--separation", type=float, help="expected velocity separation in m/s")
    p.add_argument("--precision", type=float, help="requested coarse precision in m/s")
    p.add_argument("--out", help="output file")
    return parser


# -- configuration -----------------------------------------------------------------

def _apply_set(doc: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    *parents, leaf = key.split(".")
    for part in parents:
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node.setdefault(part, {})
    if isinstance(node, list):
        node[int(leaf)] = value
    else:
        node[leaf] = value


def load_effective(args) -> Scenario:
    """Scenario file plus command-line overrides, validated."""
    if args.scenario is None:
        doc = {"schema_version": 1, "targets": [{"range_m": 0.85, "velocity_mps": 10.0},
                                               {"range_m": 0.85, "velocity_mps": 16.0}]}
    else:
        path = Path(args.scenario)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    radar = doc.setdefault("radar", {})
    channel = doc.setdefault("channel", {})
    if args.seed is not None:
        radar["rng_seed"] = args.seed
        doc.setdefault("sweep", {})["base_seed"] = args.seed
    if args.packets is not None:
        radar["packets"] = args.packets
    if args.pri_us is not None:
        radar["pri_us"] = args.pri_us
    if args.snr_db is not None:
        channel["snr_db"] = args.snr_db
        if "sweep" in doc:
            doc["sweep"]["snr_grid_db"] = [args.snr_db]
    for item in args.set:
        try:
            _apply_set(doc, item)
        except (IndexError, ValueError, TypeError) as exc:
            raise ConfigError(f"--set {item!r}: {exc}") from None
    try:
        return parse_scenario(doc, source=args.scenario)
    except (ScenarioError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _estimator_config(args, base: dict | None, n_targets: int) -> EstimatorConfig:
    base = dict(base or {})
    cfg = {
        "algorithm": base.get("algorithm", "esprit_lo"),
        "fft_size": base.get("fft_size", 1024),
        "smoothing_len": base.get("smoothing_len"),
        "model_order": base.get("order", min(n_targets, 2)),
        "search_grid": base.get("search_grid", 4096),
        "evd_mode": base.get("evd_mode", "iterated"),
    }
    for flag, key in (("algorithm", "algorithm"), ("fft_size", "fft_size"),
                      ("smoothing_len", "smoothing_len"), ("order", "model_order")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    try:
        return EstimatorConfig(**cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _sweep_estimators(args, scn: Scenario) -> tuple:
    entries = scn.sweep.get("estimators") or [{}]
    specs = []
    for k, entry in enumerate(entries):
        cfg = _estimator_config(args, entry, len(scn.targets))
        name = entry.get("name") or (cfg.algorithm if len(entries) == 1 else f"{cfg.algorithm}_{k}")
        packets = entry.get("packets")
        pri_s = entry["pri_us"] * 1e-6 if "pri_us" in entry else None
        if args.packets is not None:
            packets = args.packets
        if args.pri_us is not None:
            pri_s = args.pri_us * 1e-6
        specs.append(EstimatorSpec(name, cfg, packets, pri_s))
    return tuple(specs)


def _provenance(verb: str, scn: Scenario, extra: dict | None = None) -> list[str]:
    lines = [f"doppler-isac {__version__} {verb}",
             "scenario " + json.dumps(scenario_to_dict(scn), sort_keys=True)]
    if extra:
        lines.append("settings " + json.dumps(extra, sort_keys=True))
    return lines


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc
    else:
        sys.stdout.write(text)


def _config_dict(cfg: EstimatorConfig) -> dict:
    return {"algorithm": cfg.algorithm, "fft_size": cfg.fft_size, "smoothing_len": cfg.smoothing_len,
            "order": cfg.model_order, "search_grid": cfg.search_grid, "evd_mode": cfg.evd_mode}


# -- verbs ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    scn = load_effective(args)
    cube = synthesize_cube(scn.targets, scn.params, trial=args.trial)
    det = locator.peak_search(cube, coherent_avg=True)
    summary = {
        "shape": list(cube.data.shape),
        "noise_variance": cube.noise_variance,
        "fading": [[h.real, h.imag] for h in cube.fading],
        "detection": {"range_bin": det.range_bin, "angle_bin": det.angle_bin},
    }
    if args.out:
        header = "\n".join(_provenance("simulate", scn, {"trial": args.trial}))
        with open(args.out, "wb") as fh:
            np.savez(fh, data=cube.data, fading=cube.fading,
                     noise_variance=np.float64(cube.noise_variance), provenance=np.array(header))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_estimate(args) -> int:
    scn = load_effective(args)
    cfg = _estimator_config(args, None, len(scn.targets))
    cube = synthesize_cube(scn.targets, scn.params, trial=args.trial)
    if args.n_ref is None:
        det = locator.peak_search(cube, coherent_avg=True)
    else:
        det = locator.peak_search(cube, args.n_ref)
    est = doppler.estimate(locator.extract_slow_time(cube, det), cfg)
    out = {
        "provenance": _provenance("estimate", scn, {"trial": args.trial, "estimator": _config_dict(cfg)}),
        "detection": {"range_bin": det.range_bin, "angle_bin": det.angle_bin,
                      "peak_magnitude": det.peak_magnitude},
        "algorithm": est.algorithm,
        "velocities_mps": [float(v) for v in est.velocities_mps],
        "eigen_moduli": None if est.eigen_moduli is None else [float(m) for m in est.eigen_moduli],
        "resolution_mps": est.resolution_mps,
        "precision_mps": est.precision_mps,
        "ops": est.ops.as_dict(),
    }
    _write_or_print(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    scn = load_effective(args)
    sw = scn.sweep
    try:
        spec = SweepSpec(
            params=scn.params, targets=scn.targets,
            snr_grid_db=sw.get("snr_grid_db", list(harness.SNR_GRID_DB)),
            estimators=_sweep_estimators(args, scn),
            trials=args.trials if args.trials is not None else sw.get("trials", 500),
            base_seed=sw.get("base_seed", scn.params.rng_seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = harness.run_sweep(spec, header=_provenance("sweep", scn, {"trials": spec.trials}))
    _write_or_print(harness.csv_text(result), args.out)
    if args.plotdata:
        harness.emit_plotdata(result, args.plotdata)
    return EXIT_OK


def _floats(text: str, what: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated numbers, got {text!r}") from None


def cmd_calibrate(args) -> int:
    scn = load_effective(args)
    options = []
    for item in args.options.split(","):
        try:
            n, pri = item.split("@")
            options.append((int(n), float(pri) * 1e-6))
        except ValueError:
            raise ConfigError(f"--options entries must look like 50@2, got {item!r}") from None
    try:
        template = controller.Policy(packet_options=tuple(options), rho=args.rho)
        grid = controller.CalibrationGrid(
            separations_mps=_floats(args.separations, "--separations"),
            snr_grid_db=_floats(args.snr_grid, "--snr-grid"),
            trials=args.trials,
            base_velocity_mps=scn.targets[0].velocity_mps,
            base_seed=scn.params.rng_seed,
            radar=scn.params,
            cell=scn.targets[0])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cal = controller.calibrate(template, grid, floor_mps=args.floor)
    print(cal.report)
    if args.out:
        controller.save_policy(cal.policy, args.out)
    return EXIT_OK


def cmd_complexity(args) -> int:
    scn = load_effective(args)
    if scn.sweep.get("estimators"):
        specs = _sweep_estimators(args, scn)
    else:
        cfg = EstimatorConfig("esprit_lo", model_order=2)
        specs = tuple(
            EstimatorSpec(f"{alg}_N{n}", cfg.with_(algorithm=alg), packets=n, pri_s=2e-6)
            for n in (50, 200) for alg in ("esprit_lo", "esprit_hi", "music"))
        specs += tuple(EstimatorSpec(f"fft_{p}", EstimatorConfig("fft", fft_size=p), 100, 0.58e-6)
                       for p in (1024, 4096, 16384))
    try:
        rows = harness.complexity_report(specs, args.baseline, scn.params)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    text = "".join(f"# {line}\n" for line in _provenance("complexity", scn)) + harness.format_complexity(rows) + "\n"
    _write_or_print(text, args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    try:
        policy = controller.load_policy(args.policy) if args.policy else controller.Policy()
    except OSError as exc:
        raise ConfigError(f"cannot read policy {args.policy}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    decision = controller.plan(args.mode, args.snr_db, args.separation, policy, precision_mps=args.precision)
    out = {"inputs": {"mode": args.mode, "snr_db": args.snr_db, "separation_mps": args.separation,
                      "precision_mps": args.precision, "policy": args.policy},
           "decision": decision.as_dict()}
    _write_or_print(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "sweep": cmd_sweep,
            "calibrate": cmd_calibrate, "complexity": cmd_complexity, "plan": cmd_plan}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"doppler-isac: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        print(f"doppler-isac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
