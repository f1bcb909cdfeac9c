"""Observation vectors for each experiment variant, plus running normalisation."""

from __future__ import annotations

import enum
import math

import numpy as np

from .dynamics import TWO_PI, ContractViolation, SwarmState, TargetSpec


class EncodingMode(str, enum.Enum):
    FULL_STATE = "full_state"
    POSITIONS_ONLY = "positions_only"
    MEAN_POSE = "mean_pose"
    MEAN_POSE_UNABSORBED = "mean_pose_unabsorbed"
    FULL_STATE_BEARING = "full_state_bearing"


def obs_dim(mode: EncodingMode, n_swimmers: int) -> int:
    mode = EncodingMode(mode)
    if mode is EncodingMode.FULL_STATE:
        return 3 * n_swimmers + 3
    if mode is EncodingMode.POSITIONS_ONLY:
        return 2 * n_swimmers + 3
    if mode is EncodingMode.FULL_STATE_BEARING:
        return 3 * n_swimmers + 4
    return 6


def mean_angle(angles, circular=False) -> float:
    angles = np.mod(angles, TWO_PI)
    if circular:
        return float(np.mod(math.atan2(np.sin(angles).mean(), np.cos(angles).mean()), TWO_PI))
    return float(angles.mean())


def encode(state: SwarmState, target: TargetSpec, mode: EncodingMode, circular_mean=False) -> np.ndarray:
    """Flatten swarm and target into one observation vector.

    Per-swimmer blocks come first, in swimmer order, then ``(x_t, y_t, r_t)``.
    The bearing variant appends the angle from the swarm mean to the target.
    """
    mode = EncodingMode(mode)
    pos = state.positions
    tgt = (target.x, target.y, target.radius)

    if mode in (EncodingMode.FULL_STATE, EncodingMode.FULL_STATE_BEARING):
        block = np.column_stack([pos, state.orientations]).ravel()
        obs = np.concatenate([block, tgt])
        if mode is EncodingMode.FULL_STATE_BEARING:
            mx, my = pos.mean(axis=0)
            obs = np.append(obs, math.atan2(target.y - my, target.x - mx))
        return obs
    if mode is EncodingMode.POSITIONS_ONLY:
        return np.concatenate([pos.ravel(), tgt])

    sel = np.ones(len(pos), dtype=bool)
    if mode is EncodingMode.MEAN_POSE_UNABSORBED and not state.absorbed.all():
        sel = ~state.absorbed
    mx, my = pos[sel].mean(axis=0)
    return np.array([mx, my, mean_angle(state.orientations[sel], circular_mean), *tgt])


class RunningNormalizer:
    """Streaming mean/variance of observations with clipped standardisation.

    Batches are merged with the pairwise moments update, so the statistics
    equal the two-pass population mean/variance of everything seen.
    """

    def __init__(self, dim: int, epsilon: float = 1e-8, clip: float = 10.0):
        self.dim = dim
        self.epsilon = epsilon
        self.clip = clip
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0

    def update(self, batch):
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if batch.shape[1] != self.dim:
            raise ContractViolation(f"expected dim {self.dim}, got {batch.shape[1]}")
        b_count = batch.shape[0]
        if b_count == 1:
            b_mean, b_var = batch[0], 0.0
        else:
            b_mean = batch.mean(axis=0)
            b_var = batch.var(axis=0)
        total = self.count + b_count
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * b_count + delta**2 * self.count * b_count / total
        self.mean = self.mean + delta * b_count / total
        self.var = m2 / total
        self.count = total

    def normalize(self, obs, update=False):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.dim:
            raise ContractViolation(f"expected dim {self.dim}, got {obs.shape[-1]}")
        if update:
            self.update(obs)
        z = (obs - self.mean) / np.sqrt(self.var + self.epsilon)
        return np.clip(z, -self.clip, self.clip)

    def state_dict(self):
        return {"mean": self.mean.copy(), "var": self.var.copy(), "count": self.count}

    def load_state_dict(self, d):
        mean = np.asarray(d["mean"], dtype=np.float64)
        if mean.shape != (self.dim,):
            raise ContractViolation(f"normalizer dim mismatch: {mean.shape} vs ({self.dim},)")
        self.mean = mean.copy()
        self.var = np.asarray(d["var"], dtype=np.float64).copy()
        self.count = float(d["count"])


class ReturnScaler:
    """Divides rewards by the running std of the discounted return (off by default)."""

    def __init__(self, num_envs: int, gamma: float, epsilon: float = 1e-8):
        self.gamma = gamma
        self.returns = np.zeros(num_envs)
        self.stats = RunningNormalizer(1, epsilon=epsilon)

    def scale(self, rewards, dones):
        self.returns = self.returns * self.gamma + rewards
        self.stats.update(self.returns[:, None])
        self.returns[dones] = 0.0
        return rewards / np.sqrt(self.stats.var[0] + self.stats.epsilon)
