import numpy as np
import pytest

from mirrormpc.errors import ValidationError
from mirrormpc.simulation import (
    DiscreteActionDynamics,
    DynamicsModel,
    FunctionCost,
    RolloutBatch,
    crn_streams,
    evaluate_sequences,
    rollout,
    rollout_batch,
)


class FrozenDynamics(DynamicsModel):
    state_dim = 2
    noise_dim = 0
    deterministic = True

    def step(self, state, control, noise):
        return np.asarray(state, dtype=np.float64)


class ScalarLti(DynamicsModel):
    """x' = x + u + w, scalar."""

    state_dim = 1
    noise_dim = 1
    deterministic = False

    def __init__(self, noise_scale=0.0):
        self.noise_scale = noise_scale

    def step(self, state, control, noise):
        u = float(np.asarray(control).reshape(-1)[0])
        return np.asarray(state, dtype=np.float64) + u + self.noise_scale * noise[0]


class ExplodingDynamics(DynamicsModel):
    state_dim = 1
    noise_dim = 0
    deterministic = True

    def step(self, state, control, noise):
        return np.asarray(state) * 1e200


zero_cost = FunctionCost(lambda x, u: 0.0, lambda x: 0.0)
unit_cost = FunctionCost(lambda x, u: 1.0, lambda x: 0.0)
quad_cost = FunctionCost(
    lambda x, u: 0.5 * float(np.sum(np.square(x))), lambda x: 0.5 * float(np.sum(np.square(x)))
)


class TestRollout:
    def test_zero_cost(self):
        traj, c = rollout(FrozenDynamics(), zero_cost, np.zeros(2), np.zeros((5, 1)))
        assert c == 0.0

    def test_constant_stage_cost(self):
        traj, c = rollout(FrozenDynamics(), unit_cost, np.zeros(2), np.zeros((5, 1)))
        assert c == 5.0
        assert traj.shape == (6, 2)

    def test_scalar_lti_hand_unrolled(self):
        # x' = x + u, x0 = 1, zero controls, H = 2: states all 1,
        # C = 0.5 + 0.5 + 0.5 = 1.5.
        traj, c = rollout(ScalarLti(), quad_cost, np.array([1.0]), np.zeros((2, 1)))
        assert c == pytest.approx(1.5, abs=1e-12)
        np.testing.assert_array_equal(traj.ravel(), [1.0, 1.0, 1.0])

    def test_initial_state_preserved(self):
        traj, _ = rollout(ScalarLti(), quad_cost, np.array([3.0]), np.ones((4, 1)))
        assert traj[0, 0] == 3.0

    def test_non_finite_marks_invalid(self):
        traj, c = rollout(ExplodingDynamics(), quad_cost, np.array([1.0]), np.ones((5, 1)))
        assert c == np.inf

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValidationError):
            rollout(FrozenDynamics(), zero_cost, np.zeros(2), np.zeros((0, 1)))


class TestRolloutBatch:
    def test_deterministic_model_matches_single_rollouts(self):
        seqs = np.random.default_rng(0).normal(size=(8, 5, 1))
        batch = rollout_batch(ScalarLti(), quad_cost, np.array([1.0]), seqs)
        for i in range(8):
            _, c = rollout(ScalarLti(), quad_cost, np.array([1.0]), seqs[i])
            assert batch.costs[i] == pytest.approx(c, rel=1e-12)

    def test_identical_sequences_share_noise(self):
        seqs = np.zeros((2, 6, 1))
        batch = rollout_batch(ScalarLti(noise_scale=2.0), quad_cost, np.array([0.0]), seqs, noise=9)
        np.testing.assert_array_equal(batch.trajectories[0], batch.trajectories[1])
        assert batch.costs[0] == batch.costs[1]

    def test_bit_identical_reruns(self):
        seqs = np.random.default_rng(1).normal(size=(10, 4, 1))
        a = rollout_batch(ScalarLti(noise_scale=1.0), quad_cost, np.zeros(1), seqs, noise=123)
        b = rollout_batch(ScalarLti(noise_scale=1.0), quad_cost, np.zeros(1), seqs, noise=123)
        np.testing.assert_array_equal(a.costs, b.costs)
        np.testing.assert_array_equal(a.trajectories, b.trajectories)

    def test_costs_recomputable_from_trajectories(self):
        rng = np.random.default_rng(2)
        seqs = rng.normal(size=(12, 5, 1))
        batch = rollout_batch(ScalarLti(noise_scale=0.5), quad_cost, np.zeros(1), seqs, noise=4)
        np.testing.assert_allclose(batch.recompute_costs(quad_cost), batch.costs, atol=1e-9)

    def test_crn_perturbation_localized(self):
        rng = np.random.default_rng(3)
        seqs = rng.normal(size=(5, 6, 1))
        base = rollout_batch(ScalarLti(noise_scale=1.0), quad_cost, np.zeros(1), seqs, noise=7)
        seqs2 = seqs.copy()
        seqs2[2] += 1.0
        pert = rollout_batch(ScalarLti(noise_scale=1.0), quad_cost, np.zeros(1), seqs2, noise=7)
        for i in range(5):
            same = np.array_equal(base.trajectories[i], pert.trajectories[i])
            assert same == (i != 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            RolloutBatch(np.zeros((2, 3, 1)), np.zeros((3, 4, 1)), np.zeros(2))


class TestEvaluateSequences:
    def test_generic_path_matches_rollout_batch(self):
        rng = np.random.default_rng(4)
        seqs = rng.normal(size=(6, 5, 1))
        streams = crn_streams(8, 3, 5, 1)
        out = evaluate_sequences(ScalarLti(noise_scale=1.0), quad_cost, np.zeros(1), seqs, streams)
        assert out.shape == (6, 3)
        for k in range(3):
            ref = rollout_batch(ScalarLti(noise_scale=1.0), quad_cost, np.zeros(1), seqs, streams[k])
            np.testing.assert_allclose(out[:, k], ref.costs, rtol=1e-12)


class TestDiscreteAdapter:
    def test_index_mapping(self):
        actions = np.array([-1.0, 0.0, 2.0])
        adapted = DiscreteActionDynamics(ScalarLti(), actions)
        out = adapted.step(np.array([0.0]), 2, np.zeros(1))
        assert out[0] == 2.0

    def test_batch_mapping(self):
        actions = np.array([-1.0, 1.0])
        adapted = DiscreteActionDynamics(ScalarLti(), actions)
        out = adapted.step_batch(np.zeros((3, 1)), np.array([0, 1, 0]), np.zeros(1))
        np.testing.assert_array_equal(out.ravel(), [-1.0, 1.0, -1.0])
