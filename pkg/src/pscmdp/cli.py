"""Command-line entry point: ``run``, ``levels``, ``plot`` and ``oracle``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .harness import ConfigError, ExperimentConfig, compute_reference_levels, run_suite
from .envs import ASSETS, BUILTIN_ENVS, GridParseError, make_env
from .lp import InfeasibleError, solve_cmdp

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3
ENV_CHOICES = sorted(ASSETS + BUILTIN_ENVS)


def _levels_dict(levels) -> dict:
    return levels.to_dict()


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_toml(args.config)
    suite = run_suite(cfg, out_dir=args.out, workers=args.workers, full_logs=args.full_logs)
    print(f"wrote {suite.out_dir}")
    if not suite.manifest["epoch_bound_ok"]:
        print("warning: epoch-count bound exceeded on some runs", file=sys.stderr)
    if suite.failures:
        print(f"{suite.failures} run(s) failed; see manifest.json", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_levels(args) -> int:
    levels = compute_reference_levels(args.env, args.budget)
    print(json.dumps(_levels_dict(levels), indent=2))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .svg import emit_figures

    for path in emit_figures(args.in_dir, args.out):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    env = make_env(args.env, args.budget)
    try:
        occ, values = solve_cmdp(env.cmdp)
    except InfeasibleError as err:
        print(f"infeasible: {err}")
        return EXIT_OK
    print(f"optimal average reward: {values.reward_rate:.12g}")
    print("average costs: " + ", ".join(f"{c:.12g}" for c in values.cost_rates))
    print("occupancy measure (state, action, mu):")
    for s, a in zip(*np.nonzero(occ.mu > 1e-12)):
        print(f"  {s:4d} {a:2d} {occ.mu[s, a]:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pscmdp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment suite from a TOML config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--full-logs", action="store_true", help="also write every step of every run")
    run.set_defaults(func=cmd_run)

    for name, func, text in (("levels", cmd_levels, "print optimal, fast and safe LP levels"),
                             ("oracle", cmd_oracle, "print the LP optimum and its occupancy measure")):
        q = sub.add_parser(name, help=text)
        q.add_argument("--env", required=True, choices=ENV_CHOICES)
        q.add_argument("--budget", type=float, required=True)
        q.set_defaults(func=func)

    plot = sub.add_parser("plot", help="write SVG figures for a finished suite")
    plot.add_argument("--in", dest="in_dir", required=True)
    plot.add_argument("--out", default=None)
    plot.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, GridParseError, FileNotFoundError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
