import math

import numpy as np
import pytest
from scipy import stats

from swarmnav import dynamics as dyn
from swarmnav.curriculum import (
    CurriculumSpec,
    CurriculumTarget,
    max_distance,
    sample_curriculum_target,
)
from swarmnav.envs import SwarmEnv, SyncVectorEnv


def test_start_and_limit():
    spec = CurriculumSpec(20, 100, 1000)
    assert max_distance(0, spec) == 20.0
    assert max_distance(10**7, spec) == pytest.approx(100.0)


def test_closed_form_value():
    assert max_distance(1000, CurriculumSpec(20, 100, 1000)) == pytest.approx(100 - 80 / math.e)
    assert max_distance(1000, CurriculumSpec(20, 100, 1000)) == pytest.approx(70.57, abs=5e-3)


def test_monotone_and_bounded():
    spec = CurriculumSpec(20, 100, 500)
    d = [max_distance(e, spec) for e in range(0, 5000, 7)]
    assert all(b > a for a, b in zip(d, d[1:]))
    assert all(20 <= x < 100 for x in d)
    flat = CurriculumSpec(50, 50, 500)
    assert {max_distance(e, flat) for e in range(100)} == {50.0}


def test_invalid_specs():
    with pytest.raises(dyn.ConfigurationError):
        CurriculumSpec(100, 20, 10)
    with pytest.raises(dyn.ConfigurationError):
        CurriculumSpec(20, 100, 0)


def test_early_targets_are_close():
    spec = CurriculumSpec(20, 100, 1000)
    rng = np.random.default_rng(0)
    for _ in range(200):
        t = sample_curriculum_target(spec, rng)
        assert math.hypot(t.x, t.y) <= max_distance(spec.episode - 1, spec)
        assert 5 <= t.radius <= 20
    assert spec.episode == 200


def test_disc_law_ks():
    # uniform-in-area: P(dist <= r) = r^2 / d^2
    spec = CurriculumSpec(20, 100, 1000, episode=800)
    d = max_distance(800, spec)
    rng = np.random.default_rng(1)
    from swarmnav.curriculum import draw_target

    dist = np.array([math.hypot(t.x, t.y) for t in (draw_target(spec, rng) for _ in range(100_000))])
    assert dist.max() <= d
    result = stats.kstest(dist, lambda r: np.clip(r / d, 0, 1) ** 2)
    assert result.pvalue > 0.01


def test_shared_counter_counts_episode_starts_once():
    spec = CurriculumSpec(20, 100, 1000)
    envs = SyncVectorEnv(
        [
            SwarmEnv(16, sampler=CurriculumTarget(spec), rng=np.random.default_rng(k),
                     physics=dyn.PhysicsConfig(max_steps=5))
            for k in range(2)
        ]
    )
    envs.reset()
    assert spec.episode == 2
    for _ in range(5):
        envs.step([0.0, 1.0])
    assert spec.episode == 4
    ds = [e.curriculum_d for e in envs.envs]
    assert ds == [max_distance(2, spec), max_distance(3, spec)]
