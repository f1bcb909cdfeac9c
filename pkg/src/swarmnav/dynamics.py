"""2D kinematics of a magnetically steered micro-swimmer swarm.

Every swimmer moves at the same speed along a heading set by one global
field angle, deflected towards ``theta_m - pi/2`` in proportion to how
crowded its neighbourhood is. Swimmers that reach the circular target
are absorbed and stay frozen for the rest of the episode.

Lengths are in micrometres, times in seconds, angles in radians.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

TWO_PI = 2.0 * math.pi
_TINY = 1e-290  # keeps coupling / r2 finite for coincident swimmers


class ContractViolation(RuntimeError):
    """Raised when an operation is called outside its precondition."""


class ConfigurationError(ValueError):
    """Raised for invalid or unsatisfiable configuration."""


class TerminationReason(str, enum.Enum):
    NONE = "None"
    ALL_ABSORBED = "AllAbsorbed"
    MAX_STEPS = "MaxSteps"
    DRIFTED_AWAY = "DriftedAway"


@dataclass(frozen=True)
class SwimmerInit:
    grid_side: int = 2
    spacing: float = 6.0

    def __post_init__(self):
        if self.grid_side < 1:
            raise ConfigurationError(f"grid_side must be >= 1, got {self.grid_side}")
        if not self.spacing > 0:
            raise ConfigurationError(f"spacing must be positive, got {self.spacing}")

    @property
    def n_swimmers(self) -> int:
        return self.grid_side * self.grid_side

    @classmethod
    def for_swimmers(cls, n: int, spacing: float = 6.0) -> "SwimmerInit":
        side = math.isqrt(n)
        if side * side != n:
            raise ConfigurationError(f"swimmer count must be a perfect square, got {n}")
        return cls(grid_side=side, spacing=spacing)


@dataclass(frozen=True)
class TargetSpec:
    x: float
    y: float
    radius: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PhysicsConfig:
    velocity: float = 10.0
    dt: float = 0.1
    hydro_coupling: float = 2.0
    hydro_cap: float = 1.0
    hydro_phase_offset: float = -math.pi / 2
    max_steps: int = 500
    abort_distance: float = 200.0

    def __post_init__(self):
        if not (self.velocity > 0 and self.dt > 0):
            raise ConfigurationError("velocity and dt must be positive")
        if not (self.hydro_coupling > 0 and self.abort_distance > 0):
            raise ConfigurationError("lengths must be positive")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")

    @property
    def step_length(self) -> float:
        return self.velocity * self.dt


@dataclass
class SwarmState:
    positions: np.ndarray  # (N, 2)
    orientations: np.ndarray  # (N,)
    absorbed: np.ndarray  # (N,) bool
    step_count: int = 0
    episode_index: int = 0
    terminated: bool = False

    @property
    def n_swimmers(self) -> int:
        return len(self.orientations)

    def copy(self) -> "SwarmState":
        return replace(
            self,
            positions=self.positions.copy(),
            orientations=self.orientations.copy(),
            absorbed=self.absorbed.copy(),
        )


@dataclass(frozen=True)
class StepOutcome:
    reward: int
    terminated: bool
    reason: TerminationReason = TerminationReason.NONE


def hydro_weights(positions, absorbed, coupling=2.0, cap=1.0):
    """Hydrodynamic weight of every swimmer, ``min(cap, sum_j coupling / r_ij^2)``.

    Only active (unabsorbed) swimmers contribute or receive a weight;
    absorbed entries are returned as 0. Coincident active swimmers
    saturate the weight at ``cap``.
    """
    positions = np.asarray(positions, dtype=np.float64)
    active = ~np.asarray(absorbed, dtype=bool)
    all_active = active.all()
    p = positions if all_active else positions[active]
    if len(p) < 2:
        return np.zeros(len(positions))
    x, y = p[:, 0], p[:, 1]
    dx = x[:, None] - x
    dy = y[:, None] - y
    r2 = dx * dx + dy * dy
    np.fill_diagonal(r2, np.inf)
    raw = (coupling / np.maximum(r2, _TINY)).sum(axis=1)
    w = np.minimum(raw, cap)
    if all_active:
        return w
    rho = np.zeros(len(positions))
    rho[active] = w
    return rho


def hydro_weight(positions, absorbed, i, coupling=2.0, cap=1.0) -> float:
    """Weight for swimmer ``i`` alone; see :func:`hydro_weights`."""
    if absorbed[i]:
        raise ContractViolation(f"swimmer {i} is absorbed")
    return float(hydro_weights(positions, absorbed, coupling, cap)[i])


def effective_angle(theta_m, rho, phase_offset=-math.pi / 2):
    """Blend the field heading with the transverse drift heading.

    ``rho * (theta_m + phase_offset) + (1 - rho) * theta_m``
    """
    return theta_m + rho * phase_offset


def step(state: SwarmState, target: TargetSpec, theta_m: float, cfg: PhysicsConfig):
    """Advance the swarm by one time step under field angle ``theta_m``.

    All active swimmers move simultaneously; hydrodynamic weights come from
    the configuration before the move. Returns the new state and outcome;
    the input state is not modified.
    """
    if state.terminated:
        raise ContractViolation("cannot step a terminated episode")
    theta_m = math.fmod(theta_m, TWO_PI)
    if theta_m < 0.0:
        theta_m += TWO_PI
    if theta_m >= TWO_PI:
        theta_m = 0.0
    absorbed = state.absorbed.copy()
    active = ~absorbed
    rho = hydro_weights(state.positions, absorbed, cfg.hydro_coupling, cfg.hydro_cap)
    theta = effective_angle(theta_m, rho, cfg.hydro_phase_offset)
    theta = np.where(theta < 0.0, theta + TWO_PI, theta)

    ds = cfg.step_length
    positions = state.positions.copy()
    orientations = np.where(active, theta, state.orientations)
    positions[:, 0] += np.where(active, ds * np.cos(theta), 0.0)
    positions[:, 1] += np.where(active, ds * np.sin(theta), 0.0)

    dx = positions[:, 0] - target.x
    dy = positions[:, 1] - target.y
    newly = active & (dx * dx + dy * dy <= target.radius * target.radius)
    reward = int(newly.sum())
    absorbed |= newly

    step_count = state.step_count + 1
    drift = math.hypot(dx.mean(), dy.mean())
    if absorbed.all():
        reason = TerminationReason.ALL_ABSORBED
    elif drift > cfg.abort_distance:
        reason = TerminationReason.DRIFTED_AWAY
    elif step_count >= cfg.max_steps:
        reason = TerminationReason.MAX_STEPS
    else:
        reason = TerminationReason.NONE
    done = reason is not TerminationReason.NONE

    new_state = SwarmState(
        positions=positions,
        orientations=orientations,
        absorbed=absorbed,
        step_count=step_count,
        episode_index=state.episode_index,
        terminated=done,
    )
    return new_state, StepOutcome(reward=reward, terminated=done, reason=reason)


def initial_positions(init: SwimmerInit) -> np.ndarray:
    """Square lattice of swimmers centred on the origin."""
    k = np.arange(init.grid_side, dtype=np.float64) * init.spacing
    k -= k.mean()
    xx, yy = np.meshgrid(k, k, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


class TargetSampler(Protocol):
    def __call__(self, rng: np.random.Generator, positions: np.ndarray) -> TargetSpec: ...


@dataclass
class FixedTarget:
    target: TargetSpec = field(default_factory=lambda: TargetSpec(10.56, 41.63, 9.36))

    def __call__(self, rng, positions):
        return self.target


@dataclass
class UniformTarget:
    """Random target around the initial swarm mean.

    ``shape="square"`` draws the centre uniformly from the axis-aligned
    square of half-width ``max_distance``; ``"disc"`` draws it uniformly
    from the disc of that radius.
    """

    max_distance: float = 100.0
    radius_range: tuple = (5.0, 20.0)
    shape: str = "square"

    def __post_init__(self):
        if self.shape not in ("square", "disc"):
            raise ConfigurationError(f"unknown target shape {self.shape!r}")

    def __call__(self, rng, positions):
        origin = positions.mean(axis=0)
        if self.shape == "square":
            cx, cy = rng.uniform(-self.max_distance, self.max_distance, size=2)
        else:
            cx, cy = sample_disc(rng, self.max_distance)
        radius = rng.uniform(*self.radius_range)
        return TargetSpec(float(origin[0] + cx), float(origin[1] + cy), float(radius))


def sample_disc(rng, radius):
    """Uniform-in-area point on a disc of the given radius."""
    r = radius * math.sqrt(rng.uniform())
    phi = rng.uniform(0.0, TWO_PI)
    return r * math.cos(phi), r * math.sin(phi)


def overlaps(target: TargetSpec, positions) -> bool:
    d = np.asarray(positions) - (target.x, target.y)
    return bool((np.einsum("ij,ij->i", d, d) <= target.radius**2).any())


def reset(init: SwimmerInit, sampler, cfg: PhysicsConfig, rng, episode_index=0, max_tries=100):
    """Start a new episode: lattice swarm, random headings, sampled target.

    Targets that already contain a swimmer are redrawn up to ``max_tries``
    times before giving up with :class:`ConfigurationError`.
    """
    positions = initial_positions(init)
    orientations = rng.uniform(0.0, TWO_PI, size=init.n_swimmers)
    for _ in range(max_tries):
        target = sampler(rng, positions)
        if not overlaps(target, positions):
            break
    else:
        raise ConfigurationError(f"no non-overlapping target after {max_tries} draws")
    state = SwarmState(
        positions=positions,
        orientations=orientations,
        absorbed=np.zeros(init.n_swimmers, dtype=bool),
        step_count=0,
        episode_index=episode_index,
    )
    return state, target
