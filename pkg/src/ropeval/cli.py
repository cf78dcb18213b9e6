"""Command line entry point: ``simulate``, ``sweep``, ``estimate``, ``export-env``.

Every subcommand takes ``--config FILE`` plus one ``--<field>`` flag per
configuration field; flags override the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import ALIASES, field_types, load_config, parse_value
from .errors import RopeError
from .harness import (
    ExperimentConfig,
    build_environment,
    estimate_from_csv,
    replicate_seeds,
    run_cell,
    run_sweep,
)
from .mdp import sample_stream
from .trajectory import write_trajectory


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value configuration file")
    group = p.add_argument_group("configuration fields (override the file)")
    for name in field_types():
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        flags += [f"--{alias}" for alias, target in ALIASES.items() if target == name]
        group.add_argument(*flags, dest=f"cfg_{name}", metavar="VALUE", default=None)


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for name in field_types():
        raw = getattr(args, f"cfg_{name}")
        if raw is not None:
            overrides[name] = parse_value(name, raw)
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig(**overrides)


def _emit(text: str, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    config = _config_from_args(args)
    report = run_cell(config)
    _emit(report.replicate_csv(), args.out)
    if args.summary:
        _emit(report.summary_csv(), args.summary)
    elif args.out:
        sys.stdout.write(report.summary_csv())
    for msg in report.diagnostics:
        print(msg, file=sys.stderr)
    return 0


def cmd_sweep(args):
    config = _config_from_args(args)
    report = run_sweep(config)
    _emit(report.summary_csv(), args.out)
    if args.replicates:
        _emit(report.replicate_csv(), args.replicates)
    for msg in report.diagnostics:
        print(msg, file=sys.stderr)
    return 0


def cmd_estimate(args):
    config = _config_from_args(args)
    path = args.trajectory or config.csv_path
    if not path:
        raise RopeError("estimate needs a trajectory CSV (positional argument or csv_path)")
    result = estimate_from_csv(path, config, out=args.out)
    if not args.out:
        sys.stdout.write(result.to_csv())
    else:
        ci = result.ci
        print(f"estimate {ci.center:.9g}  CI [{ci.lower:.9g}, {ci.upper:.9g}] at level {ci.level:g}")
    return 0


def cmd_export_env(args):
    config = _config_from_args(args)
    env = build_environment(config.validate())
    env.spec.save_json(args.out)
    if args.trajectory:
        chain_seed, reward_seed, _ = replicate_seeds(config.seed, args.replicate)
        channel = config.channel().with_seed(reward_seed)
        X, Z, B, flags = sample_stream(env.spec, chain_seed, env.start_state, channel).take(config.n)
        write_trajectory(args.trajectory, X, Z, B, flags if args.flags else None)
    print(f"wrote {args.out}: {env.spec.n_states} states, d={env.spec.d}, "
          f"target value {env.truth:.9g}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ropeval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one cell of replications")
    _add_config_flags(p)
    p.add_argument("--out", help="per-replicate CSV (stdout if omitted)")
    p.add_argument("--summary", help="aggregate CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of cells given by sweep_* fields")
    _add_config_flags(p)
    p.add_argument("--out", help="aggregate CSV (stdout if omitted)")
    p.add_argument("--replicates", help="per-replicate CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("estimate", help="run the estimator on a trajectory CSV")
    _add_config_flags(p)
    p.add_argument("trajectory", nargs="?", help="CSV with columns x_1..x_d, z_1..z_d, b")
    p.add_argument("--out", help="result CSV (stdout if omitted)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("export-env", help="write the environment as JSON, optionally with a trajectory")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="JSON path for the environment")
    p.add_argument("--trajectory", help="also write n observations of replicate --replicate here")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--flags", action="store_true", help="include the outlier column")
    p.set_defaults(func=cmd_export_env)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RopeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
