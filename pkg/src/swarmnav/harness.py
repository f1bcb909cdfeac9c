"""Training and evaluation runs: env construction, CSV logs, checkpoints, trajectory dumps."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from .checkpoint import DimensionMismatch, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dump_config, from_flat
from .curriculum import CurriculumSpec, CurriculumTarget
from .encoders import RunningNormalizer, obs_dim
from .envs import SwarmEnv, SyncVectorEnv
from .neural import Policy
from .ppo import Trainer, TrainingDiverged

log = logging.getLogger(__name__)

EPISODE_FIELDS = ["global_step", "episode", "return", "length", "reason", "curriculum_d"]
UPDATE_FIELDS = [
    "update", "global_step", "lr", "policy_loss", "value_loss", "entropy",
    "approx_kl", "clipfrac", "explained_variance", "skipped_steps", "log_std",
]
CHECKPOINT_NAME = "checkpoint.bin"


@dataclass
class EpisodeRecord:
    global_step: int
    episode: int
    ret: int
    length: int
    reason: str
    curriculum_d: float | None = None

    def row(self):
        d = "" if self.curriculum_d is None else repr(float(self.curriculum_d))
        return [self.global_step, self.episode, self.ret, self.length, self.reason, d]


@dataclass
class RunResult:
    config: ExperimentConfig
    episodes: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    output_dir: Path | None = None
    trainer: Trainer | None = None

    @property
    def smoothed_return(self) -> float:
        return smoothed_return(self.episodes, self.config.smoothing_window)


def smoothed_return(records, window: int = 100) -> float:
    """Mean undiscounted return of the last ``window`` episodes."""
    if not records:
        raise ValueError("no completed episodes")
    tail = records[-window:]
    return float(np.mean([r.ret if isinstance(r, EpisodeRecord) else r for r in tail]))


def make_sampler(cfg: ExperimentConfig, curriculum: CurriculumSpec | None = None, evaluation=False):
    kind = cfg.variant.target
    if kind == "fixed":
        return dyn.FixedTarget(dyn.TargetSpec(*cfg.fixed_target))
    if kind == "random":
        return dyn.UniformTarget(cfg.target_max_distance, cfg.target_radius_range, cfg.target_shape)
    if evaluation:
        return dyn.UniformTarget(cfg.curriculum.d_final, cfg.target_radius_range, "disc")
    return CurriculumTarget(curriculum, cfg.target_radius_range)


def make_envs(cfg: ExperimentConfig, curriculum: CurriculumSpec | None = None):
    """Vector env for a run; every env owns an RNG stream derived from the seed."""
    streams = np.random.SeedSequence([cfg.seed, 1]).spawn(cfg.train.num_envs)
    envs = [
        SwarmEnv(
            cfg.n_swimmers,
            cfg.variant.encoding,
            make_sampler(cfg, curriculum),
            cfg.physics,
            np.random.default_rng(s),
            cfg.spacing,
            cfg.circular_mean,
        )
        for s in streams
    ]
    return SyncVectorEnv(envs)


class Run:
    """A trainer together with the shared curriculum counter it drives."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.curriculum = None
        if cfg.curriculum is not None and cfg.variant.target == "curriculum":
            c = cfg.curriculum
            self.curriculum = CurriculumSpec(c.d_start, c.d_final, c.decay, c.episode)
        self.trainer = Trainer(cfg.train, make_envs(cfg, self.curriculum), cfg.seed)

    def state_dict(self):
        d = self.trainer.state_dict()
        if self.curriculum is not None:
            d["curriculum_episode"] = self.curriculum.episode
        return d

    def load_state_dict(self, d):
        self.trainer.load_state_dict(d)
        if self.curriculum is not None:
            self.curriculum.episode = int(d["curriculum_episode"])

    def save(self, path):
        save_checkpoint(path, self.cfg.to_flat(), self.state_dict())


def _records(episodes):
    return [
        EpisodeRecord(e["global_step"], e["episode"], int(e["return"]), e["length"], e["reason"], e["curriculum_d"])
        for e in episodes
    ]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _truncate_log(path: Path, column: str, limit: int):
    lines = path.read_bytes().splitlines(keepends=True)
    idx = lines[0].rstrip(b"\r\n").split(b",").index(column.encode())
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(b",")[idx]) <= limit]
    if len(keep) != len(lines):
        path.write_bytes(b"".join(keep))


def run_training(cfg: ExperimentConfig, write_files=True, resume=False, max_updates=None) -> RunResult:
    """Train until ``total_timesteps`` (or ``max_updates`` more updates).

    With ``write_files`` the run directory receives ``episodes.csv``,
    ``updates.csv``, ``config.yaml`` and ``checkpoint.bin``. ``resume``
    continues from an existing checkpoint there, appending to the logs.
    """
    run = Run(cfg)
    out = cfg.resolved_output_dir() if write_files else None
    result = RunResult(cfg, output_dir=out, trainer=run.trainer)
    ep_writer = up_writer = None
    files = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / CHECKPOINT_NAME
        resuming = resume and ckpt.exists()
        if resuming:
            loaded = load_checkpoint(ckpt)
            _check_compatible(cfg, loaded.config)
            run.load_state_dict(loaded.state)
            # rows written after the last checkpoint would be duplicated on replay
            _truncate_log(out / "episodes.csv", "global_step", run.trainer.global_step)
            _truncate_log(out / "updates.csv", "update", run.trainer.update)
            log.info("resumed from %s at update %d", ckpt, run.trainer.update)
        else:
            dump_config(cfg, out / "config.yaml")
        mode = "a" if resuming else "w"
        ep_fh = open(out / "episodes.csv", mode, newline="")
        up_fh = open(out / "updates.csv", mode, newline="")
        files = [ep_fh, up_fh]
        ep_writer, up_writer = csv.writer(ep_fh), csv.writer(up_fh)
        if not resuming:
            ep_writer.writerow(EPISODE_FIELDS)
            up_writer.writerow(UPDATE_FIELDS)

    trainer = run.trainer
    done_updates = 0
    try:
        while not trainer.finished and (max_updates is None or done_updates < max_updates):
            try:
                diag, episodes = trainer.train_iteration()
            except TrainingDiverged:
                if out is not None:
                    run.save(out / "checkpoint-diverged.bin")
                raise
            done_updates += 1
            records = _records(episodes)
            result.episodes.extend(records)
            result.diagnostics.append(diag)
            if ep_writer is not None:
                ep_writer.writerows(r.row() for r in records)
                up_writer.writerow([_fmt(diag[k]) for k in UPDATE_FIELDS])
                if cfg.checkpoint_every and trainer.update % cfg.checkpoint_every == 0:
                    for fh in files:
                        fh.flush()
                    run.save(out / CHECKPOINT_NAME)
            if records:
                log.info(
                    "update %d step %d: %d episodes, smoothed return %.2f",
                    trainer.update, trainer.global_step, len(records),
                    smoothed_return(result.episodes, cfg.smoothing_window),
                )
        if out is not None:
            run.save(out / CHECKPOINT_NAME)
    finally:
        for fh in files:
            fh.close()
    return result


def _check_compatible(cfg: ExperimentConfig, saved: dict):
    other = from_flat(saved)
    a = obs_dim(cfg.variant.encoding, cfg.n_swimmers)
    b = obs_dim(other.variant.encoding, other.n_swimmers)
    if a != b:
        raise DimensionMismatch(f"observation size {a} does not match checkpoint ({b})")


def load_policy(path, overrides: dict | None = None):
    """Policy, frozen normaliser and config from a checkpoint.

    ``overrides`` are flat config keys applied on top of the saved config;
    they may change the environment but not the observation size.
    """
    ckpt = load_checkpoint(path)
    saved = from_flat(ckpt.config)
    flat = dict(ckpt.config)
    flat.update(overrides or {})
    cfg = from_flat(flat)
    dim = obs_dim(cfg.variant.encoding, cfg.n_swimmers)
    saved_dim = obs_dim(saved.variant.encoding, saved.n_swimmers)
    if dim != saved_dim:
        raise DimensionMismatch(f"observation size {dim} does not match checkpoint ({saved_dim})")
    policy = Policy(dim, saved.train.hidden_dims, rng=np.random.default_rng(0))
    params = np.asarray(ckpt.state["params"], dtype=np.float64)
    if params.shape != policy.params.data.shape:
        raise DimensionMismatch("parameter vector does not match the network layout")
    policy.params.data[:] = params
    policy.params.bump()
    normalizer = RunningNormalizer(dim)
    normalizer.load_state_dict(ckpt.state["normalizer"])
    return policy, normalizer, cfg


def _step_record(episode, t, state, target, action=None, reward=0, reason=None):
    return {
        "type": "step",
        "episode": episode,
        "t": t,
        "action": action,
        "reward": reward,
        "reason": reason,
        "positions": state.positions.tolist(),
        "orientations": state.orientations.tolist(),
        "absorbed": state.absorbed.tolist(),
        "target": [target.x, target.y, target.radius],
    }


def run_inference(checkpoint, episodes=100, deterministic=True, dump_path=None, overrides=None, seed=0, svg_dir=None):
    """Roll out a saved policy with frozen normalisation.

    Returns the list of absorbed counts per episode. With ``dump_path`` every
    time step is written as one JSON line (``t == 0`` is the reset state with
    a null action).
    """
    policy, normalizer, cfg = load_policy(checkpoint, overrides)
    rng_env, rng_act = (np.random.default_rng(s) for s in np.random.SeedSequence([seed, 2]).spawn(2))
    env = SwarmEnv(
        cfg.n_swimmers, cfg.variant.encoding, make_sampler(cfg, evaluation=True),
        cfg.physics, rng_env, cfg.spacing, cfg.circular_mean,
    )
    lo, hi = cfg.train.action_low, cfg.train.action_high
    fh = open(dump_path, "w") if dump_path else None
    returns = []
    try:
        if fh:
            meta = {"type": "meta", "config": cfg.to_flat(), "deterministic": deterministic, "seed": seed}
            fh.write(json.dumps(meta) + "\n")
        for ep in range(episodes):
            obs = env.reset()
            trace = [env.state.positions.copy()]
            if fh:
                fh.write(json.dumps(_step_record(ep, 0, env.state, env.target)) + "\n")
            done = False
            while not done:
                x = normalizer.normalize(obs[None, :])
                action, _, _ = policy.act(x, rng_act, deterministic=deterministic)
                a = float(np.clip(action[0], lo, hi))
                obs, reward, done, info = env.step(a)
                trace.append(env.state.positions.copy())
                if fh:
                    rec = _step_record(ep, env.state.step_count, env.state, env.target, a, reward, info["reason"].value)
                    fh.write(json.dumps(rec) + "\n")
            returns.append(env.episode_return)
            if svg_dir is not None:
                render_svg(np.array(trace), env.target, Path(svg_dir) / f"episode_{ep:04d}.svg")
    finally:
        if fh:
            fh.close()
    return returns


def read_dump(path):
    meta, episodes = None, {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["type"] == "meta":
                meta = rec
            else:
                episodes.setdefault(rec["episode"], []).append(rec)
    return meta, episodes


def replay(path, svg_dir=None):
    """Re-simulate a trajectory dump from its recorded actions.

    Returns the number of steps whose recomputed state differs from the
    recorded one (0 means the dump is self-consistent).
    """
    meta, episodes = read_dump(path)
    cfg = from_flat(meta["config"])
    mismatches = 0
    for ep, recs in sorted(episodes.items()):
        first = recs[0]
        state = dyn.SwarmState(
            positions=np.array(first["positions"]),
            orientations=np.array(first["orientations"]),
            absorbed=np.array(first["absorbed"], dtype=bool),
        )
        target = dyn.TargetSpec(*first["target"])
        trace = [state.positions.copy()]
        for rec in recs[1:]:
            state, outcome = dyn.step(state, target, rec["action"], cfg.physics)
            trace.append(state.positions.copy())
            same = (
                np.array_equal(state.positions, np.array(rec["positions"]))
                and np.array_equal(state.absorbed, np.array(rec["absorbed"], dtype=bool))
                and outcome.reward == rec["reward"]
            )
            mismatches += not same
        if svg_dir is not None:
            render_svg(np.array(trace), target, Path(svg_dir) / f"replay_{ep:04d}.svg")
    return mismatches


def render_svg(trace, target, path):
    """Plot swimmer paths (``trace`` is ``(T, N, 2)``) and the target as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_patch(plt.Circle((target.x, target.y), target.radius, color="lightblue", alpha=0.6))
    for i in range(trace.shape[1]):
        ax.plot(trace[:, i, 0], trace[:, i, 1], lw=0.8)
    ax.plot(trace[0, :, 0], trace[0, :, 1], "k.", ms=3)
    ax.set_aspect("equal")
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    fig.savefig(path, format="svg")
    plt.close(fig)


def summarize(returns):
    arr = np.asarray(returns, dtype=float)
    if not len(arr):
        return {"episodes": 0, "mean_absorbed": math.nan}
    return {
        "episodes": len(arr),
        "mean_absorbed": float(arr.mean()),
        "std_absorbed": float(arr.std()),
        "min_absorbed": float(arr.min()),
        "max_absorbed": float(arr.max()),
    }
