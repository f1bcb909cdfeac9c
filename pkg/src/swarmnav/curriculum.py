"""Exponential target-distance schedule for curriculum training."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ConfigurationError, TargetSpec, sample_disc


@dataclass
class CurriculumSpec:
    d_start: float = 20.0
    d_final: float = 100.0
    decay: float = 1000.0
    episode: int = 0

    def __post_init__(self):
        if not 0 < self.d_start <= self.d_final:
            raise ConfigurationError("need 0 < d_start <= d_final")
        if not self.decay > 0:
            raise ConfigurationError("decay must be positive")


def max_distance(episode: int, spec: CurriculumSpec) -> float:
    if episode < 0:
        raise ValueError("episode index must be non-negative")
    return spec.d_final - (spec.d_final - spec.d_start) * math.exp(-episode / spec.decay)


def draw_target(spec: CurriculumSpec, rng, radius_range=(5.0, 20.0), origin=(0.0, 0.0)):
    """Target centred uniformly on the disc allowed at the current episode.
    Does not advance the episode counter."""
    cx, cy = sample_disc(rng, max_distance(spec.episode, spec))
    radius = rng.uniform(*radius_range)
    return TargetSpec(float(origin[0] + cx), float(origin[1] + cy), float(radius))


def sample_curriculum_target(spec: CurriculumSpec, rng, radius_range=(5.0, 20.0), origin=(0.0, 0.0)):
    target = draw_target(spec, rng, radius_range, origin)
    spec.episode += 1
    return target


class CurriculumTarget:
    """Target sampler bound to a (possibly shared) :class:`CurriculumSpec`.

    The environment calls :meth:`advance` once per accepted episode start, so
    rejected overlapping draws do not move the schedule.
    """

    def __init__(self, spec: CurriculumSpec, radius_range=(5.0, 20.0)):
        self.spec = spec
        self.radius_range = tuple(radius_range)
        self.last_distance = None

    def __call__(self, rng, positions):
        self.last_distance = max_distance(self.spec.episode, self.spec)
        return draw_target(self.spec, rng, self.radius_range, np.asarray(positions).mean(axis=0))

    def advance(self):
        self.spec.episode += 1
