"""Command-line entry point.

    skillroute run EXPERIMENT.yaml [--out DIR]
    skillroute preset NAME [--out DIR] [--replications N] [--seed S]
    skillroute validate EXPERIMENT.yaml

Exit codes: 0 success, 1 a preset check failed, 2 configuration error,
3 scenario error, 4 a policy failed in at least one cell (partial results
are still written, see ``manifest.json``). The worker-pool size comes from
the ``SKILLROUTE_WORKERS`` environment variable (default 1).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex

log = logging.getLogger("skillroute")


def _print_summary(result: ex.ExperimentResult) -> None:
    print(f"{'cell':40s} {'payoff':>10s} {'per compl.':>10s} {'rel.':>7s} {'wait':>8s}")
    for c in result.cells:
        r = result.reports[c.name]
        rel = r.payoff_relative_to_oracle
        print(f"{c.name:40s} {r.total_payoff:10.1f} {r.payoff_per_completion:10.4f} "
              f"{'' if rel is None else format(rel, '.4f'):>7s} {r.mean_wait:8.2f}")
    for name, err in result.failed.items():
        print(f"FAILED {name}: {err}")
    if result.checks:
        print(ex.format_checks(result.checks))


def _finish(result: ex.ExperimentResult, out) -> int:
    if out:
        path = ex.write_outputs(result, out)
        print(f"reports written to {path}")
    _print_summary(result)
    return result.status


def cmd_run(args) -> int:
    exp = ex.load_experiment(args.config)
    out = args.out or exp.out
    if out and not Path(out).is_absolute() and exp.base_dir is not None and not args.out:
        out = exp.base_dir / out
    return _finish(ex.run_experiment(exp), out or f"results/{exp.name}")


def cmd_preset(args) -> int:
    result = ex.run_preset(args.name, args.replications, args.seed)
    return _finish(result, args.out or f"results/{args.name}")


def cmd_validate(args) -> int:
    exp = ex.load_experiment(args.config)
    cfg, horizon = exp.scenario.build(exp.seed, exp.base_dir)
    cells = exp.cells()
    print(f"{exp.name}: {cfg.num_types} types, {cfg.num_servers} servers, {len(cfg.lines)} lines, "
          f"horizon {horizon:g}s, {len(cells)} cells x {exp.replications} replications")
    return ex.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillroute", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment file")
    r.add_argument("config")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("preset", help="run a built-in experiment")
    s.add_argument("name", choices=sorted(ex.PRESETS))
    s.add_argument("--out")
    s.add_argument("--replications", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_preset)
    v = sub.add_parser("validate", help="check an experiment file without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return ex.EXIT_CONFIG if exc.code else ex.EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    except ex.ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return ex.EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
