"""Gym-style episodic wrapper around the swarm dynamics, and a synchronous vector of them."""

from __future__ import annotations

import numpy as np

from . import dynamics as dyn
from .encoders import EncodingMode, encode, obs_dim


class SwarmEnv:
    def __init__(
        self,
        n_swimmers: int,
        mode=EncodingMode.FULL_STATE,
        sampler=None,
        physics: dyn.PhysicsConfig | None = None,
        rng=None,
        spacing: float = 6.0,
        circular_mean: bool = False,
    ):
        self.init = dyn.SwimmerInit.for_swimmers(n_swimmers, spacing)
        self.mode = EncodingMode(mode)
        self.sampler = sampler if sampler is not None else dyn.FixedTarget()
        self.physics = physics or dyn.PhysicsConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.circular_mean = circular_mean
        self.state: dyn.SwarmState | None = None
        self.target: dyn.TargetSpec | None = None
        self.episodes_started = 0
        self.episode_return = 0
        self.curriculum_d = None

    @property
    def n_swimmers(self) -> int:
        return self.init.n_swimmers

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.mode, self.n_swimmers)

    def observe(self):
        return encode(self.state, self.target, self.mode, self.circular_mean)

    def reset(self):
        self.state, self.target = dyn.reset(
            self.init, self.sampler, self.physics, self.rng, episode_index=self.episodes_started
        )
        self.curriculum_d = getattr(self.sampler, "last_distance", None)
        advance = getattr(self.sampler, "advance", None)
        if advance is not None:
            advance()
        self.episodes_started += 1
        self.episode_return = 0
        return self.observe()

    def step(self, action: float):
        if self.state is None:
            raise dyn.ContractViolation("call reset() before step()")
        self.state, outcome = dyn.step(self.state, self.target, action, self.physics)
        self.episode_return += outcome.reward
        info = {"reason": outcome.reason}
        if outcome.terminated:
            info["episode"] = {
                "return": self.episode_return,
                "length": self.state.step_count,
                "reason": outcome.reason.value,
                "curriculum_d": self.curriculum_d,
            }
        return self.observe(), outcome.reward, outcome.terminated, info

    def state_dict(self):
        s = self.state
        return {
            "positions": s.positions.copy(),
            "orientations": s.orientations.copy(),
            "absorbed": s.absorbed.copy(),
            "step_count": s.step_count,
            "episode_index": s.episode_index,
            "terminated": s.terminated,
            "target": [self.target.x, self.target.y, self.target.radius],
            "rng": self.rng.bit_generator.state,
            "episodes_started": self.episodes_started,
            "episode_return": self.episode_return,
            "curriculum_d": self.curriculum_d,
        }

    def load_state_dict(self, d):
        positions = np.array(d["positions"], dtype=np.float64)
        if positions.shape != (self.n_swimmers, 2):
            raise dyn.ContractViolation("swimmer count mismatch in saved environment")
        self.state = dyn.SwarmState(
            positions=positions,
            orientations=np.array(d["orientations"], dtype=np.float64),
            absorbed=np.array(d["absorbed"], dtype=bool),
            step_count=int(d["step_count"]),
            episode_index=int(d["episode_index"]),
            terminated=bool(d["terminated"]),
        )
        self.target = dyn.TargetSpec(*map(float, d["target"]))
        self.rng.bit_generator.state = d["rng"]
        self.episodes_started = int(d["episodes_started"])
        self.episode_return = int(d["episode_return"])
        self.curriculum_d = d["curriculum_d"]


class SyncVectorEnv:
    """Steps every env together, in index order, auto-resetting finished ones.

    The observation returned for a finished env is the first observation of
    its next episode; the terminal one is kept in ``info["final_obs"]``.
    """

    def __init__(self, envs):
        self.envs = list(envs)
        dims = {e.obs_dim for e in self.envs}
        if len(dims) != 1:
            raise dyn.ConfigurationError("all environments must share an observation size")
        self.obs_dim = dims.pop()

    @property
    def num_envs(self) -> int:
        return len(self.envs)

    def reset(self):
        return np.stack([e.reset() for e in self.envs])

    def step(self, actions):
        obs = np.empty((self.num_envs, self.obs_dim))
        rewards = np.zeros(self.num_envs)
        dones = np.zeros(self.num_envs, dtype=bool)
        infos = []
        for k, (env, a) in enumerate(zip(self.envs, actions)):
            o, r, d, info = env.step(float(a))
            if d:
                info["final_obs"] = o
                o = env.reset()
            obs[k], rewards[k], dones[k] = o, r, d
            infos.append(info)
        return obs, rewards, dones, infos

    def observe(self):
        return np.stack([e.observe() for e in self.envs])
