"""Command-line entry points: train, eval, baseline, sweep."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, default_edge_config, load_config
from .harness import run_baseline, run_eval, run_sweep, run_training


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML experiment file (default: built-in edge network)")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument(
        "--paper-scale",
        action="store_true",
        help="use the full 20000/10000/2000 phase schedule instead of the desk-scale default",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttlnet",
        description="Deadline-constrained network control experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the learned control stack, then test it")
    _add_common(p_train)

    p_eval = sub.add_parser("eval", help="greedy test episodes of a saved checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint directory to load")

    p_base = sub.add_parser("baseline", help="run a non-learning policy on the test schedule")
    _add_common(p_base)
    p_base.add_argument("--policy", required=True, choices=["bp", "umw"])

    p_sweep = sub.add_parser("sweep", help="compare policies across arrival rates")
    _add_common(p_sweep)
    p_sweep.add_argument(
        "--rates", required=True, help="comma-separated arrival rates, e.g. 6,8,10"
    )
    p_sweep.add_argument(
        "--policies", default="bp,umw,cdrl", help="comma-separated policy list"
    )
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config else default_edge_config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.paper_scale:
        cfg.paper_scale()
    return cfg


def _print_summary(summary: dict) -> None:
    rel = summary["mean_reliability"]
    print(f"episodes: {summary['episodes']}")
    print(f"mean cost per episode: {summary['mean_cost']:.3f}")
    for c, r in enumerate(rel, start=1):
        print(f"commodity {c}: reliability {r:.4f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "train":
            summary = run_training(cfg)
            print(f"best checkpoint: {summary['best_checkpoint']}")
            _print_summary(summary)
        elif args.command == "eval":
            summary = run_eval(cfg, args.checkpoint)
            _print_summary(summary)
        elif args.command == "baseline":
            summary = run_baseline(cfg, args.policy)
            _print_summary(summary)
        elif args.command == "sweep":
            rates = [float(r) for r in args.rates.split(",") if r]
            policies = [p.strip() for p in args.policies.split(",") if p.strip()]
            results = run_sweep(cfg, rates, policies)
            for res in results:
                rel = ", ".join(f"{r:.3f}" for r in res["mean_reliability"])
                print(
                    f"{res['policy']:>5} rate={res['rate']:g} "
                    f"cost={res['mean_cost']:.2f} reliability=[{rel}]"
                )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
