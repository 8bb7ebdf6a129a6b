import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posebeam.simulation.trajectory import PoseMarkovModel, PoseState, PoseTrajectory, sample_trajectory


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_same_seed_same_trajectory(seed):
    model = PoseMarkovModel()
    a = sample_trajectory(model, 5.0, 250, rng_seed=seed)
    b = sample_trajectory(model, 5.0, 250, rng_seed=seed)
    assert np.array_equal(a.yaw_rad, b.yaw_rad)


def test_yaw_is_continuous():
    model = PoseMarkovModel()
    trajectory = sample_trajectory(model, 5.0, 250, rng_seed=7)
    dt = 5.0 / 250
    assert np.all(np.abs(np.diff(trajectory.yaw_rad)) <= model.speed_range_rad_s[1] * dt + 1e-12)


def test_constant_left_turn_integrates_speed():
    model = PoseMarkovModel(transition_matrix=np.eye(3), initial_probs=(0.0, 1.0, 0.0),
                            speed_range_rad_s=(1.0, 1.0))
    trajectory = sample_trajectory(model, 5.0, 250, rng_seed=0, initial_yaw_rad=0.0)
    assert trajectory.yaw_rad[-1] - trajectory.yaw_rad[0] == pytest.approx(5.0, abs=0.02 + 1e-9)


def test_always_still_stays_static():
    model = PoseMarkovModel(transition_matrix=np.eye(3), initial_probs=(1.0, 0.0, 0.0))
    trajectory = sample_trajectory(model, 2.0, 100, rng_seed=3)
    assert trajectory.is_static
    assert trajectory.yaw_range_rad == 0.0


def test_state_directions():
    assert [s.direction for s in PoseState] == [0, 1, -1]


@pytest.mark.parametrize("kwargs", [
    dict(transition_matrix=np.full((3, 3), 0.5)),
    dict(transition_matrix=np.eye(2)),
    dict(initial_probs=(0.5, 0.5, 0.5)),
    dict(speed_range_rad_s=(2.0, 1.0)),
    dict(step_s=0.0),
])
def test_invalid_model_raises(kwargs):
    with pytest.raises(ValueError):
        PoseMarkovModel(**kwargs)


def test_transitions_for_other_spacings():
    model = PoseMarkovModel()
    np.testing.assert_allclose(model.transitions_for(0.04), model.transition_matrix @ model.transition_matrix)
    half = model.transitions_for(0.01)
    np.testing.assert_allclose(half.sum(axis=1), 1.0)
    np.testing.assert_allclose(half @ half, model.transition_matrix, atol=1e-8)


def test_trajectory_dict_round_trip():
    trajectory = sample_trajectory(PoseMarkovModel(), 1.0, 50, rng_seed=11)
    restored = PoseTrajectory.from_dict(trajectory.to_dict())
    assert np.array_equal(restored.yaw_rad, trajectory.yaw_rad)
    assert restored.duration_s == trajectory.duration_s


def test_invalid_trajectory_raises():
    with pytest.raises(ValueError):
        PoseTrajectory(np.array([0.0, np.nan]), 1.0)
    with pytest.raises(ValueError):
        PoseTrajectory(np.zeros(3), 0.0)
