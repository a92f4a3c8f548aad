"""Command-line entry point: ``run``, ``sweep``, ``report`` and ``oracle``.

Exit codes: 0 success, 1 configuration error, 2 NaN abort, 3 I/O error.
Relative output directories are placed under ``$DISCRETE_SAC_OUTPUT_ROOT``
when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from discrete_sac import experiment
from discrete_sac.config import ConfigError, apply_overrides, parse_run_config, resolve_output_dir
from discrete_sac.mdp import MDPValidationError, load_mdp
from discrete_sac.oracles import OracleConvergenceError, soft_policy_evaluation
from discrete_sac.trace import NaNAbort

OUTPUT_ROOT_ENV = "DISCRETE_SAC_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NAN, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _read_json(path: str, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(what, f"{path} is not valid JSON ({exc})") from None


def _output_root() -> str | None:
    return os.environ.get(OUTPUT_ROOT_ENV) or None


def _load_config(path: str, overrides: list[str]):
    doc = apply_overrides(_read_json(path, "<config>"), overrides)
    cfg = parse_run_config(doc)
    return doc, replace(cfg, output_dir=resolve_output_dir(cfg, _output_root()))


def cmd_run(args) -> int:
    _, cfg = _load_config(args.config, args.set)
    dirs = experiment.run(cfg, jobs=args.jobs)
    for d in dirs:
        print(d)
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc, cfg = _load_config(args.config, args.set)
    grid = _read_json(args.grid, "<grid>")
    if not isinstance(grid, dict):
        raise ConfigError("<grid>", "grid must be a JSON object of path -> list of values")
    summary = experiment.sweep(doc, grid, output_dir=cfg.output_dir, jobs=args.jobs)
    for row in summary:
        print(f"{row['cell']}\t{row['params']}\t{row['final_score_mean']}\t{row['final_score_std']}")
    return EXIT_OK


def cmd_report(args) -> int:
    baselines = _read_json(args.baselines, "--baselines") if args.baselines else None
    out = args.out or (resolve_output_dir(replace(parse_run_config({}), output_dir="report"), _output_root()))
    try:
        result = experiment.report(args.dirs, baselines, out)
    except experiment.BaselineMissing as exc:
        raise ConfigError("--baselines", exc.args[0]) from None
    for g in result["groups"]:
        print(f"{g['dir']}\t{g['env_id']}\t{g['variant']}\t{g['final_mean']}\t{g['final_std']}")
    for v, a in sorted(result["normalized"].items()):
        print(f"normalized\t{v}\tmean={a['mean']}\tmedian={a['median']}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        mdp = load_mdp(args.mdp)
    except (MDPValidationError, KeyError, ValueError) as exc:
        raise ConfigError("<mdp>", str(exc)) from None
    policy = _read_json(args.policy, "--policy")
    if isinstance(policy, dict):
        policy = policy.get("probs")
    try:
        result = soft_policy_evaluation(mdp, np.asarray(policy, dtype=np.float64), args.alpha)
    except ValueError as exc:
        raise ConfigError("--policy", str(exc)) from None
    json.dump(result.to_json(), sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="discrete-sac", description="Discrete soft actor-critic experiments on tabular MDPs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="train every seed of a config")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a dotted config path")
    r.add_argument("--jobs", type=int, default=1, help="parallel seed processes")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="cartesian grid over config paths")
    s.add_argument("config")
    s.add_argument("--grid", required=True, help="JSON object: dotted path -> list of values")
    s.add_argument("--set", action="append", default=[], metavar="PATH=VALUE")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="compare run directories")
    rp.add_argument("dirs", nargs="+")
    rp.add_argument("--baselines", help='JSON: {env_id: {"random": x, "reference": y}}')
    rp.add_argument("--out", help="where report.md and report.csv go")
    rp.set_defaults(func=cmd_report)

    o = sub.add_parser("oracle", help="exact soft Q of a tabular policy")
    o.add_argument("mdp")
    o.add_argument("--policy", required=True, help="JSON (S, A) probability table")
    o.add_argument("--alpha", type=float, required=True)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NaNAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    except FloatingPointError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    except OracleConvergenceError as exc:
        print(f"oracle did not converge: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
