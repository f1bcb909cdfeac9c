"""Acceptance gate. Each criterion records one PASS/FAIL line, printed at the end of the run.

Criteria 5 to 7 train real agents (1e6 environment steps per run, 18 runs).
Runs are deterministic, so finished runs are kept under ``runs/acceptance``
(override with ``SWARMNAV_ACCEPTANCE_DIR``) and reused when their saved
config is identical. Set ``SWARMNAV_FRESH=1`` to retrain from scratch.
Interrupted runs resume from their last checkpoint.
"""

import math
import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from oracles import gae_oracle, fd_gradient, random_minibatch, relative_error
from swarmnav import dynamics as dyn
from swarmnav.checkpoint import load_checkpoint
from swarmnav.config import cell_config, dump_config
from swarmnav.encoders import EncodingMode, obs_dim
from swarmnav.harness import Run, run_inference, run_training, smoothed_return
from swarmnav.ppo import compute_gae, ppo_loss, rpo_perturb

REPORT = []
ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("SWARMNAV_ACCEPTANCE_DIR", ROOT / "runs" / "acceptance"))
FRESH = os.environ.get("SWARMNAV_FRESH") == "1"
SEEDS = (1, 2, 3)
EVAL_EPISODES = 100


def record(n, ok, detail):
    REPORT.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1. physics


def _pairwise_rho(pos, absorbed, i):
    total = 0.0
    for j in range(len(pos)):
        if j != i and not absorbed[j]:
            total += 2.0 / ((pos[i, 0] - pos[j, 0]) ** 2 + (pos[i, 1] - pos[j, 1]) ** 2)
    return min(1.0, total)


def test_criterion_1_physics():
    rng = np.random.default_rng(11)
    cfg = dyn.PhysicsConfig()
    worst_rho, worst_step, capped = 0.0, 0.0, True
    for _ in range(200):
        n = int(rng.integers(1, 26))
        pos = rng.uniform(-30, 30, size=(n, 2))
        absorbed = rng.random(n) < 0.2
        rho = dyn.hydro_weights(pos, absorbed)
        for i in np.flatnonzero(~absorbed):
            worst_rho = max(worst_rho, abs(rho[i] - _pairwise_rho(pos, absorbed, i)))
        capped &= bool(np.all(rho <= 1.0))

        state = dyn.SwarmState(pos, rng.uniform(0, 2 * math.pi, n), absorbed)
        far = dyn.TargetSpec(1e4, 1e4, 1.0)
        nxt, _ = dyn.step(state, far, float(rng.uniform(-10, 10)), cfg)
        moved = np.hypot(*(nxt.positions - pos)[~absorbed].T)
        if moved.size:
            worst_step = max(worst_step, float(np.max(np.abs(moved - cfg.velocity * cfg.dt))))

    tight = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]])
    capped &= bool(np.all(dyn.hydro_weights(tight, np.zeros(3, bool)) == 1.0))

    th = 1.234
    blend = (
        dyn.effective_angle(th, 0.0) == th
        and math.isclose(dyn.effective_angle(th, 1.0), th - math.pi / 2, abs_tol=1e-15)
        and math.isclose(dyn.effective_angle(th, 0.3), 0.3 * (th - math.pi / 2) + 0.7 * th, abs_tol=1e-15)
    )
    ok = worst_rho <= 1e-12 and worst_step <= 1e-12 and capped and blend
    record(1, ok, f"max |rho - oracle| = {worst_rho:.1e}, max |step - v dt| = {worst_step:.1e}, cap={capped}, blend={blend}")


# ---------------------------------------------------------------- 2. gradients


def test_criterion_2_gradients():
    errors = []
    for seed in range(4):
        policy, mb, cfg = random_minibatch(seed, obs_dim=6, hidden=(64,))
        errors.append(relative_error(ppo_loss(policy, mb, cfg)[1], fd_gradient(policy, mb, cfg)))
    policy, mb, cfg = random_minibatch(9, obs_dim=15, hidden=(64,))
    cfg.algo = "rpo"
    pert = rpo_perturb(np.zeros(len(mb["actions"])), 0.5, np.random.default_rng(0))
    errors.append(relative_error(ppo_loss(policy, mb, cfg, pert)[1], fd_gradient(policy, mb, cfg, pert)))
    worst = max(errors)
    record(2, worst < 1e-5, f"max relative error vs central differences = {worst:.2e} (limit 1e-5)")


# ---------------------------------------------------------------- 3. GAE


def test_criterion_3_gae():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        T = 50
        r = rng.normal(size=T)
        v = rng.normal(size=T)
        d = rng.random(T) < 0.1
        boot = float(rng.normal())
        g = float(rng.uniform(0.5, 1.0))
        col = lambda a: a[:, None]
        for lam in (0.0, 1.0, float(rng.uniform(0, 1))):
            adv, _ = compute_gae(col(r), col(v), col(d.astype(float)), np.array([boot]), g, lam)
            worst = max(worst, float(np.max(np.abs(adv[:, 0] - gae_oracle(r, v, d, boot, g, lam)))))
        # closed forms
        nxt = np.append(v[1:], boot) * (1 - d)
        adv0, _ = compute_gae(col(r), col(v), col(d.astype(float)), np.array([boot]), g, 0.0)
        worst = max(worst, float(np.max(np.abs(adv0[:, 0] - (r + g * nxt - v)))))
        ret = np.empty(T)
        acc = boot
        for t in reversed(range(T)):
            acc = r[t] + g * acc * (1 - d[t])
            ret[t] = acc
        adv1, _ = compute_gae(col(r), col(v), col(d.astype(float)), np.array([boot]), g, 1.0)
        worst = max(worst, float(np.max(np.abs(adv1[:, 0] - (ret - v)))))
    record(3, worst <= 1e-10, f"max deviation from oracles = {worst:.1e} (limit 1e-10)")


# ---------------------------------------------------------------- 4. PPO == RPO at alpha 0


def test_criterion_4_rpo_alpha_zero():
    trajectories = []
    for algo in ("ppo", "rpo"):
        cfg = cell_config("env-0", 4, algo, seed=5)
        cfg.train.rpo_alpha = 0.0
        trainer = Run(cfg).trainer
        steps = []
        for _ in range(10):
            trainer.train_iteration()
            steps.append(trainer.policy.params.data.tobytes())
        trajectories.append(steps)
    same = sum(x == y for x, y in zip(*trajectories))
    record(4, same == 10, f"{same}/10 default-size updates with bitwise identical PPO and RPO(alpha=0) parameters")


# ---------------------------------------------------------------- 8. state sizes


def test_criterion_8_state_sizes():
    expected = {
        EncodingMode.FULL_STATE: {4: 15, 9: 30, 16: 51},
        EncodingMode.POSITIONS_ONLY: {4: 11, 9: 21, 16: 35},
        EncodingMode.MEAN_POSE: {4: 6, 9: 6, 16: 6},
        EncodingMode.MEAN_POSE_UNABSORBED: {4: 6, 9: 6, 16: 6},
        EncodingMode.FULL_STATE_BEARING: {16: 52},
    }
    from swarmnav.encoders import encode

    bad = []
    for mode, table in expected.items():
        for n, size in table.items():
            rng = np.random.default_rng(n)
            state, target = dyn.reset(dyn.SwimmerInit.for_swimmers(n), dyn.UniformTarget(), dyn.PhysicsConfig(), rng)
            got = (obs_dim(mode, n), encode(state, target, mode).shape)
            if got != (size, (size,)):
                bad.append((mode.value, n, got))
    record(8, not bad, "all encoder lengths exact" if not bad else f"mismatches {bad}")


# ---------------------------------------------------------------- 9/10. determinism and resume


def test_criterion_9_determinism(tmp_path):
    blobs = []
    for k in range(2):
        cfg = cell_config("env-2-omc", 16, "rpo", seed=8)
        cfg.train.total_timesteps = 3 * cfg.train.batch_size
        cfg.output_dir = str(tmp_path / str(k))
        run_training(cfg)
        blobs.append((tmp_path / str(k) / "episodes.csv").read_bytes())
    record(9, blobs[0] == blobs[1] and blobs[0].count(b"\n") > 1, f"two runs, episode CSV {len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}")


def test_criterion_10_resume(tmp_path):
    def cfg_for(name):
        cfg = cell_config("env-2", 4, "rpo", seed=6)
        cfg.output_dir = str(tmp_path / name)
        return cfg

    full = run_training(cfg_for("full"), max_updates=3)
    run_training(cfg_for("part"), max_updates=1)
    rest = run_training(cfg_for("part"), resume=True, max_updates=2)
    same_params = full.trainer.policy.params.data.tobytes() == rest.trainer.policy.params.data.tobytes()
    same_logs = all(
        (tmp_path / "full" / f).read_bytes() == (tmp_path / "part" / f).read_bytes()
        for f in ("episodes.csv", "updates.csv")
    )
    a = load_checkpoint(tmp_path / "full" / "checkpoint.bin").state
    b = load_checkpoint(tmp_path / "part" / "checkpoint.bin").state
    same_rng = all(a[k] == b[k] for k in ("action_rng", "shuffle_rng", "perturb_rng"))
    ok = same_params and same_logs and same_rng
    record(10, ok, f"1 + 2 resumed updates vs 3 uninterrupted: params={same_params}, logs={same_logs}, rng={same_rng}")


# ---------------------------------------------------------------- 5-7. training runs


def trained(experiment, n, algo, seed, **train):
    """Train (or reuse) one cell and return (training smoothed return, eval mean)."""
    cfg = cell_config(experiment, n, algo, seed)
    for k, v in train.items():
        setattr(cfg.train, k, v)
    out = CACHE / cfg.run_name
    cfg.output_dir = str(out)
    expected = out.parent / (cfg.run_name + ".expected.yaml")
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, expected)
    stale = not (out / "config.yaml").exists() or (out / "config.yaml").read_bytes() != expected.read_bytes()
    if FRESH or stale:
        shutil.rmtree(out, ignore_errors=True)
    ckpt = out / "checkpoint.bin"
    finished = ckpt.exists() and load_checkpoint(ckpt).state["update"] >= cfg.train.num_updates
    if not finished:
        run_training(cfg, resume=ckpt.exists())
    rows = (out / "episodes.csv").read_text().splitlines()[1:]
    returns = [int(r.split(",")[2]) for r in rows]
    train_score = smoothed_return(returns, cfg.smoothing_window)
    evals = run_inference(ckpt, episodes=EVAL_EPISODES, deterministic=True, seed=seed)
    return train_score, float(np.mean(evals))


def _fmt(scores):
    return ", ".join(f"{t:.2f}/{e:.2f}" for t, e in scores)


training = pytest.mark.training


@training
@pytest.mark.parametrize("algo", ["ppo", "rpo"])
def test_criterion_5_env0_n4(algo):
    scores = [trained("env-0", 4, algo, s) for s in SEEDS]
    passing = sum(t >= 3.5 and e >= 3.5 for t, e in scores)
    record(5, passing >= 2, f"env-0 N=4 {algo}: train/eval per seed {_fmt(scores)}; {passing}/3 seeds >= 3.5 (need 2)")


@training
def test_criterion_6_env2_n4():
    rpo = [trained("env-2", 4, "rpo", s) for s in SEEDS]
    ppo = [trained("env-2", 4, "ppo", s) for s in SEEDS]
    ok = True
    parts = []
    for label, k in (("train", 0), ("eval", 1)):
        r = float(np.mean([x[k] for x in rpo]))
        p = float(np.mean([x[k] for x in ppo]))
        ok &= r >= 3.0 and r - p >= 1.0
        parts.append(f"{label} RPO {r:.2f} vs PPO {p:.2f}")
    record(6, ok, f"env-2 N=4: {'; '.join(parts)} (need RPO >= 3.0 and margin >= 1.0); per seed RPO {_fmt(rpo)} PPO {_fmt(ppo)}")


@training
def test_criterion_7_curriculum_n16():
    scores = [trained("env-2-omc", 16, "rpo", s) for s in SEEDS]
    passing = sum(t >= 14 and e >= 14 for t, e in scores)
    record(7, passing >= 2, f"env-2-omc N=16 t_d=1000, 2 envs: train/eval per seed {_fmt(scores)}; {passing}/3 seeds >= 14 (need 2)")
