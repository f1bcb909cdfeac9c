"""Train one benchmark cell for several seeds at a chosen step budget and report smoothed returns.

    python scripts/budget_study.py env-2 4 --algos rpo ppo --steps 4000000 --seeds 1 2 3

Runs land in ``<out>/<run name>`` and are resumed if interrupted.
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from swarmnav.checkpoint import load_checkpoint
from swarmnav.config import cell_config
from swarmnav.harness import run_inference, run_training, smoothed_return


def one(experiment, n, algo, seed, steps, out: Path, eval_episodes):
    cfg = cell_config(experiment, n, algo, seed)
    cfg.train.total_timesteps = steps
    cfg.output_dir = str(out / f"{cfg.run_name}_{steps}")
    ckpt = Path(cfg.output_dir) / "checkpoint.bin"
    if not ckpt.exists() or load_checkpoint(ckpt).state["update"] < cfg.train.num_updates:
        run_training(cfg, resume=ckpt.exists())
    rows = (Path(cfg.output_dir) / "episodes.csv").read_text().splitlines()[1:]
    train = smoothed_return([int(r.split(",")[2]) for r in rows], cfg.smoothing_window)
    ev = float(np.mean(run_inference(ckpt, eval_episodes, deterministic=True, seed=seed)))
    return train, ev


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiment")
    p.add_argument("n", type=int)
    p.add_argument("--algos", nargs="+", default=["rpo", "ppo"])
    p.add_argument("--steps", type=int, default=4_000_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--eval-episodes", type=int, default=100)
    p.add_argument("--out", type=Path, default=Path("runs/budget"))
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    for algo in args.algos:
        scores = [one(args.experiment, args.n, algo, s, args.steps, args.out, args.eval_episodes) for s in args.seeds]
        per_seed = ", ".join(f"s{s}: {t:.2f}/{e:.2f}" for s, (t, e) in zip(args.seeds, scores))
        mean_t = np.mean([t for t, _ in scores])
        mean_e = np.mean([e for _, e in scores])
        print(f"{args.experiment} N={args.n} {algo} @ {args.steps} steps  train/eval {per_seed}  mean {mean_t:.2f}/{mean_e:.2f}")


if __name__ == "__main__":
    main()
