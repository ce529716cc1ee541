"""Command line entry point: ``pathfg simulate | horizon-study | validate-scene``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .planner import PlanningError, plan, validate_path
from .sim import ConfigError, build_problem, load_config, run_closed_loop, run_horizon_study, write_outputs, write_study


def _int_list(text: str):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("horizons must be positive")
    return vals


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathfg", description="Path feasibility governor simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one governed closed-loop simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--planner", choices=["rrt_star", "potential_field"], default=None)
    s.add_argument("--horizon", type=int, default=None)
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--wall-times", action="store_true",
                   help="write measured solve/governor times into trajectory.csv (breaks byte-identical reruns)")

    h = sub.add_parser("horizon-study", help="compare governed and ungoverned MPC across horizons")
    h.add_argument("--config", required=True)
    h.add_argument("--governed", type=_int_list, default=[5, 15])
    h.add_argument("--ungoverned", type=_int_list, default=[5, 20, 50])
    h.add_argument("--out", required=True)
    h.add_argument("--seed", type=int, default=None)
    h.add_argument("--no-plots", action="store_true")
    h.add_argument("--wall-times", action="store_true")

    v = sub.add_parser("validate-scene", help="check a config and its planned path")
    v.add_argument("--config", required=True)
    return p


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "planner", None):
        cfg = cfg.with_planner(args.planner)
    if getattr(args, "horizon", None):
        cfg = cfg.with_horizon(args.horizon)
    return cfg


def _simulate(args) -> int:
    cfg = _load(args)
    log = run_closed_loop(cfg)
    files = write_outputs(log, args.out, args.wall_times)
    if not args.no_plots:
        from .plotting import plot_run
        files += plot_run(log, args.out)
    s = log.summary()
    print(f"verdict={s['verdict']} steps={s['steps']} violations={s['violation_count']} "
          f"mean_solve={s['solve_time_s']['mean'] * 1e3:.2f}ms mean_gov={s['governor_time_s']['mean'] * 1e3:.3f}ms")
    if log.message:
        print(log.message)
    for f in files:
        print(f"wrote {f}")
    return 0 if log.converged else 1


def _study(args) -> int:
    cfg = _load(args)
    report = run_horizon_study(cfg, args.governed, args.ungoverned)
    files = write_study(report, args.out, args.wall_times)
    if not args.no_plots:
        from .plotting import plot_run
        for run in report["runs"]:
            files += plot_run(run["_log"], f"{args.out}/{run['mode']}_N{run['N']}")
    for r in report["runs"]:
        print(f"{r['mode']:>10} N={r['N']:<3} verdict={r['verdict']:<16} steps={r['steps']:<4} "
              f"mean_solve={r['mean_solve_time_s'] * 1e3:.2f}ms")
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def _validate(args) -> int:
    cfg = _load(args)
    prob = build_problem(cfg)
    try:
        path = plan(prob.scene, prob.model, prob.model.xi_map @ cfg.x0, cfg.goal, cfg.planner)
    except PlanningError as exc:
        print(json.dumps({"config": "ok", "path": None, "error": str(exc)}, indent=2))
        return 1
    report = validate_path(path, prob.scene, prob.model, prob.spec, cfg.x0)
    print(json.dumps({"config": "ok", "waypoints": len(path), "path_length_m": path.length,
                      **report.to_dict()}, indent=2))
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": _simulate, "horizon-study": _study, "validate-scene": _validate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
