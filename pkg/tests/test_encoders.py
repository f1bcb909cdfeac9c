import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmnav import dynamics as dyn
from swarmnav.encoders import EncodingMode, ReturnScaler, RunningNormalizer, encode, obs_dim

M = EncodingMode

SIZES = {
    M.FULL_STATE: {4: 15, 9: 30, 16: 51, 25: 78},
    M.POSITIONS_ONLY: {4: 11, 9: 21, 16: 35, 25: 53},
    M.MEAN_POSE: {4: 6, 9: 6, 16: 6, 25: 6},
    M.MEAN_POSE_UNABSORBED: {4: 6, 9: 6, 16: 6, 25: 6},
    M.FULL_STATE_BEARING: {4: 16, 9: 31, 16: 52, 25: 79},
}


def random_state(n, seed=0):
    rng = np.random.default_rng(seed)
    state, target = dyn.reset(dyn.SwimmerInit.for_swimmers(n), dyn.UniformTarget(), dyn.PhysicsConfig(), rng)
    state.absorbed[:] = rng.random(n) < 0.3
    return state, target


@pytest.mark.parametrize("mode", list(M))
@pytest.mark.parametrize("n", [4, 9, 16, 25])
def test_dimension_table(mode, n):
    state, target = random_state(n)
    obs = encode(state, target, mode)
    assert obs.shape == (obs_dim(mode, n),) == (SIZES[mode][n],)


def test_full_state_layout():
    state = dyn.SwarmState(
        positions=np.array([[1.0, 2.0], [3.0, 4.0]]), orientations=np.array([0.5, 0.6]), absorbed=np.zeros(2, bool)
    )
    target = dyn.TargetSpec(7, 8, 9)
    np.testing.assert_array_equal(encode(state, target, M.FULL_STATE), [1, 2, 0.5, 3, 4, 0.6, 7, 8, 9])
    np.testing.assert_array_equal(encode(state, target, M.POSITIONS_ONLY), [1, 2, 3, 4, 7, 8, 9])


def test_mean_pose_example():
    state = dyn.SwarmState(
        positions=np.array([[0.0, 0.0], [2.0, 0.0]]), orientations=np.array([0.0, math.pi]), absorbed=np.zeros(2, bool)
    )
    obs = encode(state, dyn.TargetSpec(10, 0, 5), M.MEAN_POSE)
    np.testing.assert_allclose(obs, [1, 0, math.pi / 2, 10, 0, 5])


def test_unabsorbed_mean_and_fallback():
    state = dyn.SwarmState(
        positions=np.array([[0.0, 0.0], [4.0, 2.0]]), orientations=np.array([1.0, 2.0]), absorbed=np.array([True, False])
    )
    t = dyn.TargetSpec(0, 0, 1)
    np.testing.assert_allclose(encode(state, t, M.MEAN_POSE_UNABSORBED), [4, 2, 2, 0, 0, 1])
    state.absorbed[:] = True
    np.testing.assert_array_equal(encode(state, t, M.MEAN_POSE_UNABSORBED), encode(state, t, M.MEAN_POSE))


def test_circular_mean_option():
    state = dyn.SwarmState(
        positions=np.zeros((2, 2)), orientations=np.array([0.1, 2 * math.pi - 0.1]), absorbed=np.zeros(2, bool)
    )
    t = dyn.TargetSpec(5, 5, 1)
    assert encode(state, t, M.MEAN_POSE)[2] == pytest.approx(math.pi)
    assert encode(state, t, M.MEAN_POSE, circular_mean=True)[2] % (2 * math.pi) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n", [4, 9, 16, 25])
def test_bearing_extends_full_state(n):
    state, target = random_state(n, seed=n)
    full = encode(state, target, M.FULL_STATE)
    bearing = encode(state, target, M.FULL_STATE_BEARING)
    np.testing.assert_array_equal(bearing[: 3 * n + 3], full)
    mx, my = state.positions.mean(axis=0)
    assert bearing[-1] == pytest.approx(math.atan2(target.y - my, target.x - mx))


def test_encode_is_pure():
    state, target = random_state(9)
    before = state.copy()
    a = encode(state, target, M.FULL_STATE)
    b = encode(state, target, M.FULL_STATE)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(state.positions, before.positions)


class TestNormalizer:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 40))
    def test_streaming_matches_two_pass(self, seed, dim, batches):
        rng = np.random.default_rng(seed)
        norm = RunningNormalizer(dim)
        chunks = [rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), size=(rng.integers(1, 5), dim)) for _ in range(batches)]
        for c in chunks:
            norm.update(c)
        data = np.concatenate(chunks)
        np.testing.assert_allclose(norm.mean, data.mean(axis=0), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(norm.var, data.var(axis=0), rtol=1e-9, atol=1e-12)
        assert norm.count == len(data)
        assert np.all(norm.var >= 0)

    def test_constant_stream_normalises_to_zero(self):
        norm = RunningNormalizer(3)
        c = np.array([4.0, -2.5, 1e3])
        for _ in range(100):
            out = norm.normalize(c, update=True)
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_frozen_when_not_updating(self):
        norm = RunningNormalizer(2)
        norm.update(np.array([[1.0, 2.0], [3.0, 5.0]]))
        before = norm.state_dict()
        norm.normalize(np.array([100.0, -100.0]))
        after = norm.state_dict()
        np.testing.assert_array_equal(before["mean"], after["mean"])
        np.testing.assert_array_equal(before["var"], after["var"])
        assert before["count"] == after["count"]

    def test_clip_bound(self):
        norm = RunningNormalizer(1, epsilon=0.0)
        norm.mean[:] = 0.0
        norm.var[:] = 1.0
        assert norm.normalize(np.array([25.0]))[0] == 10.0
        assert norm.normalize(np.array([-25.0]))[0] == -10.0

    def test_count_increases(self):
        norm = RunningNormalizer(2)
        counts = []
        for _ in range(5):
            norm.update(np.ones(2))
            counts.append(norm.count)
        assert all(b > a for a, b in zip(counts, counts[1:]))

    def test_dimension_mismatch(self):
        from swarmnav.dynamics import ContractViolation

        with pytest.raises(ContractViolation):
            RunningNormalizer(3).normalize(np.zeros(4))


def test_return_scaler_divides_by_return_std():
    scaler = ReturnScaler(1, gamma=0.9)
    out = [scaler.scale(np.array([1.0]), np.array([False]))[0] for _ in range(50)]
    assert all(np.isfinite(out))
    assert out[-1] != 1.0
