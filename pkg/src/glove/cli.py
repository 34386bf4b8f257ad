"""Command-line entry point: ``glove train|eval|baseline|report``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from glove.config import ConfigError, load_config
from glove.harness import RunAborted, run_baseline, run_eval, run_training, summarize

OUT_ENV = "GLOVE_OUT_DIR"


def _out_dir(args, verb: str, seed: int) -> Path:
    if args.out:
        return Path(args.out)
    base = Path(os.environ.get(OUT_ENV, "runs"))
    return base / f"{verb}-s{seed}"


def _config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.steps is not None:
        overrides.append(f"steps={args.steps}")
    if getattr(args, "ablation", False):
        overrides.append("self_node=false")
    return load_config(args.config, overrides)


def _print_summary(result, out: Path) -> None:
    for key, value in summarize(result.metrics).items():
        print(f"{key}\t{value}")
    print(f"metrics\t{out / 'metrics.tsv'}")


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, args.verb, cfg.seed)
    kw = {"out_dir": out, "topology": args.topology}
    if args.verb == "train":
        result = run_training(cfg, **kw)
        print(f"checkpoint\t{out / 'checkpoint.txt'}")
    elif args.verb == "eval":
        result = run_eval(cfg, checkpoint=args.checkpoint, **kw)
    else:
        result = run_baseline(cfg, **kw)
    _print_summary(result, out)
    if args.figures:
        from glove.report import plot_runs

        for path in plot_runs(result.metrics, out / "figures"):
            print(f"figure\t{path}")
    return 0


def cmd_report(args) -> int:
    from glove.report import render

    out = Path(args.out) if args.out else Path(args.metrics[0]).parent / "figures"
    for path in render(args.metrics, out, window=args.window):
        print(f"figure\t{path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glove", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<verb>-s<seed>, else runs/)")
        p.add_argument("--topology", action="store_true", help="also dump routed links per slot")
        p.add_argument("--figures", action="store_true", help="render figures next to the metrics")
        p.set_defaults(func=cmd_run)

    train = sub.add_parser("train", help="train the agent and save a checkpoint")
    common(train)
    train.add_argument("--ablation", action="store_true", help="disable the self-node path")

    ev = sub.add_parser("eval", help="run a fixed policy without noise or updates")
    common(ev)
    ev.add_argument("--checkpoint", help="parameter file from a training run (default: safe-init policy)")
    ev.add_argument("--ablation", action="store_true", help="disable the self-node path")

    base = sub.add_parser("baseline", help="uniform allocation reference run")
    common(base)

    rep = sub.add_parser("report", help="render figures from metrics files")
    rep.add_argument("metrics", nargs="+", help="metrics.tsv files")
    rep.add_argument("--out", help="figure directory (default: next to the first file)")
    rep.add_argument("--window", type=int, default=10, help="moving-average window")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunAborted as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
