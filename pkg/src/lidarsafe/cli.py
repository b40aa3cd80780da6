"""Command-line entry points.

Subcommands:
    simulate            run one scenario and write its artifacts
    verify-certificate  grid-check the configured barrier certificate
    scan-match          align a scan file against a map from a hypothesized pose
    batch               run a scenario over consecutive seeds

Exit codes: 0 success, 2 configuration error, 3 safety-verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import sim
from .geometry import MapParseError, Pose, load_map, to_cartesian
from .ndt import scan_match
from .scanner import reconstruct_scan
from .sim import ConfigError, SafetyVerificationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3

DEFAULT_CONFIG = "uav_delivery.yaml"


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None,
                   help=f"scenario YAML (default: packaged {DEFAULT_CONFIG})")


def _load(args) -> sim.ScenarioConfig:
    path = args.config if args.config else sim.data_path(DEFAULT_CONFIG)
    return sim.load_config(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidarsafe", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario")
    _add_config_arg(p)
    p.add_argument("--mode", choices=[sim.FT, sim.BASELINE], default=sim.FT)
    p.add_argument("--scenario", choices=list(sim.SCENARIOS), default="ins-attack")
    p.add_argument("--seed", type=int, default=None, help="override run.seed")
    p.add_argument("--steps", type=int, default=None, help="override run.horizon")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("verify-certificate", help="check the barrier certificate")
    _add_config_arg(p)

    p = sub.add_parser("scan-match", help="match a scan against a map")
    p.add_argument("--map", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--pose", required=True, help="hypothesized pose as 'x,y'")

    p = sub.add_parser("batch", help="run a scenario over consecutive seeds")
    _add_config_arg(p)
    p.add_argument("--mode", choices=[sim.FT, sim.BASELINE], default=sim.FT)
    p.add_argument("--scenario", choices=list(sim.SCENARIOS), default="ins-attack")
    p.add_argument("--seeds", type=int, required=True, help="number of consecutive seeds")
    p.add_argument("--out", required=True)
    return parser


def _cmd_simulate(args) -> int:
    config = _load(args).with_scenario(args.scenario)
    config = config.with_run(seed=args.seed, horizon=args.steps)
    art = sim.run_scenario(config, args.mode, args.out)
    print(f"wrote {args.out}: mode={art.mode} seed={art.seed} "
          f"min_safe_margin={art.safety.min_value:.4g} "
          f"first_violation={art.safety.first_violation}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    config = _load(args)
    from .barrier import verify_certificate
    report = verify_certificate(
        config.certificate, config.sets, config.system_model(),
        config.controller.gain, config.controller.offset,
        max(e.error_bound for e in config.estimators),
        config.grid, config.horizon)
    print(json.dumps({
        "ok": report.ok,
        "condition1_ok": report.condition1_ok,
        "condition2_ok": report.condition2_ok,
        "condition3_ok": report.condition3_ok,
        "margins": [report.margin1, report.margin2, report.margin3],
        "b_min": report.b_min,
        "xi_eff": report.xi_eff,
        "safety_probability": report.safety_probability,
        "horizon": report.horizon,
    }, indent=2, sort_keys=True, default=float))
    return EXIT_OK if report.ok else EXIT_VERIFY


def _cmd_scan_match(args) -> int:
    cloud = load_map(args.map)
    scan = sim.load_scan(args.scan)
    try:
        x, y = (float(v) for v in args.pose.split(","))
    except ValueError:
        raise ConfigError(f"--pose must be 'x,y', got {args.pose!r}") from None
    pose = Pose(x, y)
    reference = to_cartesian(pose, reconstruct_scan(pose, cloud, _scan_params_for(scan)))
    measured = to_cartesian(pose, scan)
    result = scan_match(reference, measured)
    print(json.dumps({
        "shift": [float(result.shift[0]), float(result.shift[1])],
        "loss": result.loss,
        "n_points": result.n_points,
        "shortfall": result.shortfall,
        "iterations": result.iterations,
        "converged": result.converged,
        "n_unmatched": result.n_unmatched,
    }, indent=2, sort_keys=True))
    return EXIT_OK


def _scan_params_for(scan):
    from .scanner import ScanParams
    if len(scan) < 2:
        raise ConfigError("scan file needs at least two beams")
    resolution = float(scan.angles[1] - scan.angles[0])
    max_range = float(np.nanmax(scan.ranges)) if scan.n_valid else 1.0
    return ScanParams(resolution, max_range)


def _cmd_batch(args) -> int:
    config = _load(args).with_scenario(args.scenario)
    runs = sim.run_batch(config, args.seeds, args.mode, args.out)
    summary = sim.batch_violation_summary(
        [r.safety for r in runs], config.certificate.gamma,
        config.certificate.c, config.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "verify-certificate":
            return _cmd_verify(args)
        if args.command == "scan-match":
            return _cmd_scan_match(args)
        if args.command == "batch":
            return _cmd_batch(args)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, MapParseError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SafetyVerificationError as exc:
        print(f"safety verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
