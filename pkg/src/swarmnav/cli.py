"""Command line entry point: ``swarmnav {train,eval,replay,list-experiments}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import EXPERIMENTS, REPORTED_RETURNS, load_config, parse_override
from .dynamics import ConfigurationError
from .harness import replay, run_inference, run_training, summarize
from .ppo import TrainingDiverged


def _train(args):
    cfg = load_config(args.config, args.override, seed=args.seed)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    result = run_training(cfg, resume=args.resume, max_updates=args.max_updates)
    summary = {"run": cfg.run_name, "output_dir": str(result.output_dir), "episodes": len(result.episodes)}
    if result.episodes:
        summary["smoothed_return"] = result.smoothed_return
    print(json.dumps(summary))


def _eval(args):
    overrides = dict(parse_override(o) for o in args.override)
    dump = args.dump
    if dump is None:
        dump = Path(args.checkpoint).with_name("trajectories.jsonl")
    returns = run_inference(
        args.checkpoint, args.episodes, args.deterministic, dump, overrides, args.seed, args.svg_dir,
    )
    print(json.dumps({**summarize(returns), "dump": str(dump)}))


def _replay(args):
    svg_dir = Path(args.dump).with_suffix("") if args.svg else None
    bad = replay(args.dump, svg_dir)
    print(json.dumps({"mismatched_steps": bad, "svg_dir": str(svg_dir) if svg_dir else None}))
    return 1 if bad else 0


def _list(args):
    for name, v in EXPERIMENTS.items():
        cells = sorted((n, a, r) for (e, n, a), r in REPORTED_RETURNS.items() if e == name)
        shown = ", ".join(f"n={n} {a}={r}" for n, a, r in cells)
        print(f"{name:10s} {v.description} [{v.encoding.value}, {v.num_envs} env(s)]  reported: {shown}")


def build_parser():
    p = argparse.ArgumentParser(prog="swarmnav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--output-dir")
    t.add_argument("--resume", action="store_true", help="continue from checkpoint.bin in the output dir")
    t.add_argument("--max-updates", type=int, help="stop after this many updates (resumable)")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="roll out a saved policy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--deterministic", action="store_true", help="act with the Gaussian mean")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--dump", help="trajectory output (default: trajectories.jsonl beside the checkpoint)")
    e.add_argument("--svg-dir", help="write one SVG trajectory plot per episode here")
    e.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    e.set_defaults(func=_eval)

    r = sub.add_parser("replay", help="re-simulate a trajectory dump and check consistency")
    r.add_argument("--dump", required=True)
    r.add_argument("--svg", action="store_true")
    r.set_defaults(func=_replay)

    ls = sub.add_parser("list-experiments", help="show the experiment variants")
    ls.set_defaults(func=_list)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except (ConfigurationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
