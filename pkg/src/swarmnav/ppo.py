"""On-policy actor-critic training: rollouts, GAE, clipped-surrogate updates, RPO."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import ConfigurationError, TerminationReason
from .encoders import ReturnScaler, RunningNormalizer
from .neural import Adam, Policy, clip_grad_norm, gaussian_entropy, gaussian_logprob

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    algo: str = "ppo"
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_coef: float = 0.2
    num_envs: int = 1
    rollout_horizon: int = 2048
    minibatches: int = 32
    update_epochs: int = 10
    lr: float = 3e-4
    anneal_lr: bool = True
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    clip_value_loss: bool = True
    norm_adv: bool = True
    max_grad_norm: float = 0.5
    total_timesteps: int = 1_000_000
    rpo_alpha: float = 0.5
    action_low: float = -math.pi
    action_high: float = math.pi
    hidden_dims: tuple = (64,)
    bootstrap_truncation: bool = False
    scale_rewards: bool = False

    def __post_init__(self):
        self.algo = self.algo.lower()
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.algo not in ("ppo", "rpo"):
            raise ConfigurationError(f"algo must be ppo or rpo, got {self.algo!r}")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigurationError("gamma must be in (0, 1] and gae_lambda in [0, 1]")
        if not self.clip_coef > 0:
            raise ConfigurationError("clip_coef must be positive")
        if self.num_envs < 1 or self.rollout_horizon < 1:
            raise ConfigurationError("num_envs and rollout_horizon must be positive")
        if self.rollout_horizon % self.minibatches:
            raise ConfigurationError("rollout_horizon must be divisible by minibatches")
        if self.rpo_alpha < 0:
            raise ConfigurationError("rpo_alpha must be non-negative")

    @property
    def batch_size(self) -> int:
        return self.num_envs * self.rollout_horizon

    @property
    def minibatch_size(self) -> int:
        return self.batch_size // self.minibatches

    @property
    def num_updates(self) -> int:
        return max(1, self.total_timesteps // self.batch_size)

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, E, D) normalised observations
    actions: np.ndarray  # (T, E) unclipped samples
    logprobs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray  # episode ended at this step
    values: np.ndarray
    bootstrap_values: np.ndarray  # (E,) value of the observation after the last step
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def empty(cls, horizon, num_envs, obs_dim):
        z = lambda: np.zeros((horizon, num_envs))  # noqa: E731
        return cls(
            obs=np.zeros((horizon, num_envs, obs_dim)),
            actions=z(),
            logprobs=z(),
            rewards=z(),
            dones=z(),
            values=z(),
            bootstrap_values=np.zeros(num_envs),
        )

    def __len__(self):
        return self.actions.size

    def flat(self):
        n = len(self)
        return {
            "obs": self.obs.reshape(n, -1),
            "actions": self.actions.reshape(n),
            "logprobs": self.logprobs.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
            "values": self.values.reshape(n),
        }


def compute_gae(rewards, values, dones, bootstrap_values, gamma, lam):
    """Generalised advantage estimates along axis 0.

    ``dones[t]`` marks that the episode ended at step ``t``; nothing is
    bootstrapped across it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    nonterminal = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    next_value = np.asarray(bootstrap_values, dtype=np.float64)
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * nonterminal[t] - values[t]
        last = delta + gamma * lam * nonterminal[t] * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv, eps=1e-8):
    if len(adv) < 2:
        return adv
    return (adv - adv.mean()) / (adv.std() + eps)


def rpo_perturb(mean, alpha, rng):
    """Shift the Gaussian mean by ``Uniform(-alpha, alpha)`` noise."""
    mean = np.asarray(mean, dtype=np.float64)
    return mean + rng.uniform(-alpha, alpha, size=mean.shape)


def ppo_loss(policy: Policy, mb, cfg: TrainConfig, perturbation=None, need_grad=True):
    """Clipped-surrogate loss of one minibatch and its gradient w.r.t. the flat
    parameter vector. ``mb["advantages"]`` must already be normalised."""
    obs, actions = mb["obs"], mb["actions"]
    adv, ret, old_v = mb["advantages"], mb["returns"], mb["values"]
    n = len(actions)
    c = cfg.clip_coef

    mean_out, a_tape = policy.actor.forward(obs)
    mean = mean_out[:, 0]
    if perturbation is not None:
        mean = mean + perturbation
    log_std = policy.log_std
    logp = gaussian_logprob(mean, log_std, actions)
    logratio = logp - mb["logprobs"]
    ratio = np.exp(logratio)
    clipped = np.clip(ratio, 1.0 - c, 1.0 + c)
    pg1 = -adv * ratio
    pg2 = -adv * clipped
    pg_loss = np.maximum(pg1, pg2).mean()
    entropy = gaussian_entropy(log_std)

    v_out, c_tape = policy.critic.forward(obs)
    v = v_out[:, 0]
    unclipped = (v - ret) ** 2
    if cfg.clip_value_loss:
        v_clip = old_v + np.clip(v - old_v, -c, c)
        clipped_sq = (v_clip - ret) ** 2
        v_loss = 0.5 * np.maximum(unclipped, clipped_sq).mean()
    else:
        v_loss = 0.5 * unclipped.mean()

    loss = pg_loss - cfg.entropy_coef * entropy + cfg.value_coef * v_loss
    stats = {
        "policy_loss": float(pg_loss),
        "value_loss": float(v_loss),
        "entropy": float(entropy),
        "approx_kl": float(((ratio - 1.0) - logratio).mean()),
        "clipfrac": float((np.abs(ratio - 1.0) > c).mean()),
    }
    if not need_grad:
        return float(loss), None, stats

    grad = np.zeros(policy.num_params)
    # policy term
    inside = (ratio >= 1.0 - c) & (ratio <= 1.0 + c)
    d_ratio = np.where(pg1 >= pg2, -adv, -adv * inside) / n
    d_logp = d_ratio * ratio
    inv_var = math.exp(-2.0 * log_std)
    z2 = (actions - mean) ** 2 * inv_var
    d_mean = d_logp * (actions - mean) * inv_var
    policy.actor.backward(a_tape, d_mean[:, None], grad)
    grad[policy.log_std_index] += float((d_logp * (z2 - 1.0)).sum()) - cfg.entropy_coef
    # value term
    if cfg.clip_value_loss:
        in_band = np.abs(v - old_v) <= c
        d_v = np.where(unclipped >= clipped_sq, v - ret, (v_clip - ret) * in_band) / n
    else:
        d_v = (v - ret) / n
    policy.critic.backward(c_tape, (cfg.value_coef * d_v)[:, None], grad)
    return float(loss), grad, stats


def explained_variance(pred, target) -> float:
    var = np.var(target)
    return float("nan") if var == 0 else float(1.0 - np.var(target - pred) / var)


def ppo_update(buffer: RolloutBuffer, policy: Policy, adam: Adam, cfg: TrainConfig, shuffle_rng, perturb_rng):
    """Several epochs of minibatch gradient steps on one full buffer.

    Returns a dict of diagnostics from the final minibatch plus averages.
    Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    data = buffer.flat()
    n = len(buffer)
    mb_size = cfg.minibatch_size
    clipfracs, skipped = [], 0
    stats = {}
    for _epoch in range(cfg.update_epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, mb_size):
            idx = order[start : start + mb_size]
            mb = {k: v[idx] for k, v in data.items()}
            if cfg.norm_adv:
                mb["advantages"] = normalize_advantages(mb["advantages"])
            pert = rpo_perturb(np.zeros(len(idx)), cfg.rpo_alpha, perturb_rng) if cfg.algo == "rpo" else None
            loss, grad, stats = ppo_loss(policy, mb, cfg, pert)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss}")
            clipfracs.append(stats["clipfrac"])
            clip_grad_norm(grad, cfg.max_grad_norm)
            if adam.step(policy.params.data, grad):
                policy.params.bump()
            else:
                skipped += 1
                log.warning("skipped optimizer step: non-finite gradient")
    if not math.isfinite(policy.log_std) or not np.isfinite(policy.params.data).all():
        raise TrainingDiverged("non-finite parameters after update")
    stats["clipfrac"] = float(np.mean(clipfracs))
    stats["explained_variance"] = explained_variance(data["values"], data["returns"])
    stats["skipped_steps"] = skipped
    return stats


def collect_rollout(envs, policy: Policy, normalizer: RunningNormalizer, horizon: int, rng, next_obs, cfg: TrainConfig, global_step=0, reward_scaler=None):
    """Run ``horizon`` synchronous steps of every env.

    ``next_obs`` is the current normalised observation batch. Returns
    ``(buffer, next_obs, episodes)`` where ``episodes`` lists completed
    episodes as dicts with the global step at which they ended.
    """
    E = envs.num_envs
    buf = RolloutBuffer.empty(horizon, E, envs.obs_dim)
    episodes = []
    for t in range(horizon):
        buf.obs[t] = next_obs
        action, logp, value = policy.act(next_obs, rng)
        buf.actions[t], buf.logprobs[t], buf.values[t] = action, logp, value
        raw, rewards, dones, infos = envs.step(np.clip(action, cfg.action_low, cfg.action_high))
        global_step += E
        rewards = rewards.astype(np.float64)
        if cfg.bootstrap_truncation:
            for k, info in enumerate(infos):
                if dones[k] and info["reason"] is TerminationReason.MAX_STEPS:
                    final = normalizer.normalize(info["final_obs"])
                    rewards[k] += cfg.gamma * policy.value(final)[0]
        if reward_scaler is not None:
            rewards = reward_scaler.scale(rewards, dones)
        buf.rewards[t], buf.dones[t] = rewards, dones
        for k, info in enumerate(infos):
            if "episode" in info:
                episodes.append({"global_step": global_step, "env": k, **info["episode"]})
        next_obs = normalizer.normalize(raw, update=True)
    buf.bootstrap_values[:] = policy.value(next_obs)
    buf.advantages, buf.returns = compute_gae(
        buf.rewards, buf.values, buf.dones, buf.bootstrap_values, cfg.gamma, cfg.gae_lambda
    )
    return buf, next_obs, episodes


class Trainer:
    """Owns the policy, optimiser, normaliser and RNG streams for one run."""

    def __init__(self, cfg: TrainConfig, envs, seed: int = 0):
        self.cfg = cfg
        self.envs = envs
        self.seed = seed
        if envs.num_envs != cfg.num_envs:
            raise ConfigurationError("vector env size does not match num_envs")
        init_ss, act_ss, shuf_ss, pert_ss = np.random.SeedSequence([seed, 0]).spawn(4)
        self.policy = Policy(envs.obs_dim, cfg.hidden_dims, rng=np.random.default_rng(init_ss))
        self.adam = Adam(self.policy.num_params, lr=cfg.lr)
        self.normalizer = RunningNormalizer(envs.obs_dim)
        self.reward_scaler = ReturnScaler(cfg.num_envs, cfg.gamma) if cfg.scale_rewards else None
        self.action_rng = np.random.default_rng(act_ss)
        self.shuffle_rng = np.random.default_rng(shuf_ss)
        self.perturb_rng = np.random.default_rng(pert_ss)
        self.global_step = 0
        self.update = 0
        self.episodes_done = 0
        self.next_obs = self.normalizer.normalize(envs.reset(), update=True)

    @property
    def finished(self) -> bool:
        return self.update >= self.cfg.num_updates

    def train_iteration(self):
        """One rollout plus one update. Returns ``(diagnostics, episodes)``."""
        cfg = self.cfg
        if cfg.anneal_lr:
            self.adam.lr = (1.0 - self.update / cfg.num_updates) * cfg.lr
        buf, self.next_obs, episodes = collect_rollout(
            self.envs,
            self.policy,
            self.normalizer,
            cfg.rollout_horizon,
            self.action_rng,
            self.next_obs,
            cfg,
            self.global_step,
            self.reward_scaler,
        )
        self.global_step += len(buf)
        for ep in episodes:
            ep["episode"] = self.episodes_done
            self.episodes_done += 1
        stats = ppo_update(buf, self.policy, self.adam, cfg, self.shuffle_rng, self.perturb_rng)
        self.update += 1
        diag = {
            "update": self.update,
            "global_step": self.global_step,
            "lr": self.adam.lr,
            **stats,
            "log_std": self.policy.log_std,
        }
        return diag, episodes

    def state_dict(self):
        d = {
            "params": self.policy.params.data.copy(),
            "adam": self.adam.state_dict(),
            "normalizer": self.normalizer.state_dict(),
            "action_rng": self.action_rng.bit_generator.state,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "perturb_rng": self.perturb_rng.bit_generator.state,
            "global_step": self.global_step,
            "update": self.update,
            "episodes_done": self.episodes_done,
            "next_obs": self.next_obs.copy(),
            "envs": [e.state_dict() for e in self.envs.envs],
        }
        if self.reward_scaler is not None:
            d["reward_scaler"] = {
                "returns": self.reward_scaler.returns.copy(),
                **self.reward_scaler.stats.state_dict(),
            }
        return d

    def load_state_dict(self, d):
        params = np.asarray(d["params"], dtype=np.float64)
        if params.shape != self.policy.params.data.shape:
            raise ConfigurationError(
                f"parameter count mismatch: checkpoint {params.shape[0]}, model {self.policy.num_params}"
            )
        self.policy.params.data[:] = params
        self.policy.params.bump()
        self.adam.load_state_dict(d["adam"])
        self.normalizer.load_state_dict(d["normalizer"])
        self.action_rng.bit_generator.state = d["action_rng"]
        self.shuffle_rng.bit_generator.state = d["shuffle_rng"]
        self.perturb_rng.bit_generator.state = d["perturb_rng"]
        self.global_step = int(d["global_step"])
        self.update = int(d["update"])
        self.episodes_done = int(d["episodes_done"])
        self.next_obs = np.array(d["next_obs"], dtype=np.float64)
        for env, ed in zip(self.envs.envs, d["envs"]):
            env.load_state_dict(ed)
        if self.reward_scaler is not None and "reward_scaler" in d:
            rs = d["reward_scaler"]
            self.reward_scaler.returns = np.array(rs["returns"], dtype=np.float64)
            self.reward_scaler.stats.load_state_dict(rs)
