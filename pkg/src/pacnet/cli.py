"""Command-line entry point: ``pacnet {friedman,duffing,diffusion,props}``.

Exit status is 0 on success, 1 if any result cell was flagged (or any
invariant check failed), and 2 on a usage error.
"""

import argparse
import json
import sys

from .experiments import DEFAULT_PARAM
from .harness import ExperimentConfig, aggregate, format_table, run
from .props import run_all
from .transfer import STRATEGIES

TASKS = tuple(DEFAULT_PARAM)


def parse_seeds(text):
    """``"0..4"`` (inclusive range), ``"3"`` or ``"0,2,5"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be non-negative")
    return seeds


def _seeds(text):
    try:
        return parse_seeds(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("target sizes must be positive integers")
    return vals


def _strategies(text):
    vals = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in vals if v not in STRATEGIES]
    if bad or not vals:
        raise argparse.ArgumentTypeError(
            f"unknown strategy {', '.join(bad) or text!r}; choose from {', '.join(STRATEGIES)}")
    return vals


def _ratio(text):
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad prune ratio {text!r}") from None
    if not 0.0 <= r < 1.0:
        raise argparse.ArgumentTypeError("prune ratio must satisfy 0 <= ratio < 1")
    return r


def _lam(text):
    try:
        lam = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad lambda {text!r}") from None
    if lam < 0:
        raise argparse.ArgumentTypeError("lambda must be non-negative")
    return lam


def build_parser():
    parser = argparse.ArgumentParser(prog="pacnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"run the {task} transfer grid")
        p.add_argument("--strategy", type=_strategies, default=None,
                       help="comma-separated strategies (default: pacnet)")
        p.add_argument("--n-target", type=_int_list, default=None,
                       help="comma-separated target set sizes")
        p.add_argument("--seeds", type=_seeds, default=None, help='e.g. "0..4" or "0,3"')
        p.add_argument("--param", default=None,
                       help={"friedman": "task distance d (default 1)",
                             "duffing": "linear or nonlinear (default linear)",
                             "diffusion": "source->target diffusivity (default 0.01->0.1)"}[task])
        p.add_argument("--config", default=None, help="JSON file with ExperimentConfig fields")
        p.add_argument("--out", default=None, help="output directory (default results)")
        p.add_argument("--prune-ratio", type=_ratio, default=None)
        p.add_argument("--lambda", dest="lam", type=_lam, default=None)
        p.add_argument("--timing", action="store_true",
                       help="record wall_ms (makes the CSV run-dependent)")
    sub.add_parser("props", help="run the invariant suite")
    return parser


def config_from_args(args):
    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
        if not isinstance(base, dict):
            raise ValueError("config file must contain a JSON object")
        if base.get("task", args.command) != args.command:
            raise ValueError(f"config is for task {base['task']!r}, not {args.command!r}")
    base["task"] = args.command
    overrides = {"strategies": args.strategy, "n_targets": args.n_target, "seeds": args.seeds,
                 "param": args.param, "out_dir": args.out, "prune_ratio": args.prune_ratio,
                 "lam": args.lam}
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if args.timing:
        base["record_timing"] = True
    base.setdefault("strategies", ["pacnet"])
    base.setdefault("n_targets", {"friedman": [10, 50, 100], "duffing": [10, 30, 50],
                                  "diffusion": [200]}[args.command])
    base.setdefault("seeds", [0])
    base.setdefault("out_dir", "results")
    return ExperimentConfig.from_dict(base)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    if args.command == "props":
        results = run_all(echo=print)
        failed = sum(not r.ok for r in results)
        print(f"{len(results) - failed}/{len(results)} checks passed")
        return 1 if failed else 0

    try:
        config = config_from_args(args)
    except (OSError, ValueError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"pacnet: error: {exc}", file=sys.stderr)
        return 2

    records = run(config)
    print(format_table(aggregate(records), digits=4))
    flagged = [r for r in records if r.flag]
    for r in flagged:
        print(f"flagged: {r.strategy} n_target={r.n_target} seed={r.seed} {r.metric}: {r.flag}",
              file=sys.stderr)
    print(f"{len(records)} records written to {config.out_dir}")
    return 1 if flagged else 0


if __name__ == "__main__":
    sys.exit(main())
