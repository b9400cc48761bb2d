"""Dynamics and cost interfaces, trajectory rollout, and CRN batches.

A rollout recursively applies a control sequence to a dynamics model and
accumulates the trajectory statistic (sum of stage costs plus a terminal
cost). Batched rollouts share one dynamics-noise stream across all sequences
(common random numbers), so perturbing one sequence changes only its own
trajectory. Rollouts that reach a non-finite state are marked invalid with
infinite cost instead of aborting the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


class DynamicsModel:
    """One-step transition model. Subclasses set ``state_dim``, ``noise_dim``
    and ``deterministic``, and implement :meth:`step` as a pure function of
    (state, control, noise draw)."""

    state_dim: int = 0
    noise_dim: int = 0
    deterministic: bool = False

    def step(self, state: np.ndarray, control, noise: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step_batch(self, states: np.ndarray, controls: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Vectorized transition of B states under B controls and one shared
        noise draw. Default implementation loops; hot models override."""
        return np.stack([self.step(s, c, noise) for s, c in zip(states, controls)])

    def rollout_costs(self, x0, sequences, noise_streams, cost):
        """Fused multi-stream rollout-cost kernel hook; return None when the
        (model, cost) pair has no specialized path."""
        return None


class CostModel:
    """Stage cost c(x, u) and terminal cost c_end(x); both total and finite on
    the reachable set."""

    def stage(self, state: np.ndarray, control) -> float:
        raise NotImplementedError

    def terminal(self, state: np.ndarray) -> float:
        raise NotImplementedError

    def stage_batch(self, states: np.ndarray, controls) -> np.ndarray:
        return np.array([self.stage(s, c) for s, c in zip(states, controls)])

    def terminal_batch(self, states: np.ndarray) -> np.ndarray:
        return np.array([self.terminal(s) for s in states])


class FunctionCost(CostModel):
    """Adapter wrapping two plain callables."""

    def __init__(self, stage_fn, terminal_fn):
        self._stage = stage_fn
        self._terminal = terminal_fn

    def stage(self, state, control):
        return float(self._stage(state, control))

    def terminal(self, state):
        return float(self._terminal(state))


class DiscreteActionDynamics(DynamicsModel):
    """Maps integer control indices {0..m-1} onto a base model's control set."""

    def __init__(self, base: DynamicsModel, actions):
        self.base = base
        self.actions = np.asarray(actions, dtype=np.float64)
        self.state_dim = base.state_dim
        self.noise_dim = base.noise_dim
        self.deterministic = base.deterministic

    def step(self, state, control, noise):
        return self.base.step(state, self.actions[int(control)], noise)

    def step_batch(self, states, controls, noise):
        return self.base.step_batch(states, self.actions[np.asarray(controls, dtype=np.int64)], noise)

    def rollout_costs(self, x0, sequences, noise_streams, cost):
        mapped = self.actions[np.asarray(sequences, dtype=np.int64)]
        return self.base.rollout_costs(x0, mapped, noise_streams, cost)


@dataclass
class RolloutBatch:
    """n sampled control sequences, their simulated trajectories, and the
    trajectory cost statistic of each."""

    sequences: np.ndarray      # (n, H, m) float or (n, H) int
    trajectories: np.ndarray   # (n, H+1, state_dim)
    costs: np.ndarray          # (n,)

    def __post_init__(self):
        n = self.costs.shape[0]
        if self.sequences.shape[0] != n or self.trajectories.shape[0] != n:
            raise ValidationError("sequences/trajectories/costs lengths differ")

    @property
    def n(self) -> int:
        return self.costs.shape[0]

    def recompute_costs(self, cost: CostModel) -> np.ndarray:
        """Re-derive the cost statistic from the stored trajectories."""
        n, steps = self.sequences.shape[0], self.trajectories.shape[1] - 1
        out = np.empty(n)
        for i in range(n):
            traj = self.trajectories[i]
            if not np.all(np.isfinite(traj)):
                out[i] = np.inf
                continue
            total = 0.0
            for h in range(steps):
                total += cost.stage(traj[h], self.sequences[i, h])
            total += cost.terminal(traj[steps])
            out[i] = total if np.isfinite(total) else np.inf
        return out


def _materialize_noise(noise, steps: int, noise_dim: int) -> np.ndarray:
    """Normalize a noise argument into a (steps, noise_dim) array of draws."""
    if noise is None:
        return np.zeros((steps, noise_dim))
    if isinstance(noise, np.ndarray):
        if noise.shape != (steps, noise_dim):
            raise ValidationError(f"noise shape {noise.shape} != {(steps, noise_dim)}")
        return noise
    rng = np.random.default_rng(noise)
    return rng.standard_normal((steps, noise_dim))


def crn_streams(seed_or_rng, n_streams: int, steps: int, noise_dim: int) -> np.ndarray:
    """Materialize n_streams common-random-number noise streams, (K, steps, noise_dim)."""
    rng = np.random.default_rng(seed_or_rng)
    return rng.standard_normal((n_streams, steps, noise_dim))


def rollout(model: DynamicsModel, cost: CostModel, x0: np.ndarray, seq: np.ndarray, noise=None):
    """Roll one control sequence from x0; returns (trajectory, cost statistic).

    ``noise`` may be a pre-drawn (H, noise_dim) array, a seed/generator, or
    None for zero noise. trajectory[0] is x0; a non-finite state marks the
    rollout invalid with +inf cost.
    """
    seq = np.asarray(seq)
    steps = seq.shape[0]
    if steps < 1:
        raise ValidationError("control sequence must have at least one step")
    draws = _materialize_noise(noise, steps, model.noise_dim)
    x0 = np.asarray(x0, dtype=np.float64)
    traj = np.empty((steps + 1, x0.shape[0]))
    traj[0] = x0
    total = 0.0
    valid = True
    with np.errstate(all="ignore"):
        x = x0
        for h in range(steps):
            if valid:
                total += cost.stage(x, seq[h])
            x = np.asarray(model.step(x, seq[h], draws[h]), dtype=np.float64)
            traj[h + 1] = x
            if valid and not np.all(np.isfinite(x)):
                valid = False
        if valid:
            total += cost.terminal(x)
    if not valid or not np.isfinite(total):
        total = np.inf
    return traj, float(total)


def rollout_batch(model: DynamicsModel, cost: CostModel, x0: np.ndarray, sequences: np.ndarray, noise=None) -> RolloutBatch:
    """Roll n sequences from x0 under one shared noise stream (CRN)."""
    sequences = np.asarray(sequences)
    if sequences.shape[0] < 1:
        raise ValidationError("need at least one sequence")
    n, steps = sequences.shape[0], sequences.shape[1]
    draws = _materialize_noise(noise, steps, model.noise_dim)
    x0 = np.asarray(x0, dtype=np.float64)
    states = np.broadcast_to(x0, (n, x0.shape[0])).copy()
    traj = np.empty((n, steps + 1, x0.shape[0]))
    traj[:, 0] = states
    costs = np.zeros(n)
    with np.errstate(all="ignore"):
        for h in range(steps):
            costs += cost.stage_batch(states, sequences[:, h])
            states = model.step_batch(states, sequences[:, h], draws[h])
            traj[:, h + 1] = states
        costs += cost.terminal_batch(states)
    bad = ~np.isfinite(traj).all(axis=(1, 2)) | ~np.isfinite(costs)
    costs = np.where(bad, np.inf, costs)
    return RolloutBatch(sequences=sequences, trajectories=traj, costs=costs)


def evaluate_sequences(model: DynamicsModel, cost: CostModel, x0: np.ndarray, sequences: np.ndarray, noise_streams: np.ndarray) -> np.ndarray:
    """Cost of each sequence under each of K shared noise streams, (n, K).

    noise_streams has shape (K, H, noise_dim); every sequence sees the same K
    streams. Dispatches to a fused kernel when the model provides one.
    """
    sequences = np.asarray(sequences)
    noise_streams = np.asarray(noise_streams, dtype=np.float64)
    fused = model.rollout_costs(x0, sequences, noise_streams, cost)
    if fused is not None:
        return fused
    out = np.empty((sequences.shape[0], noise_streams.shape[0]))
    for k in range(noise_streams.shape[0]):
        out[:, k] = rollout_batch(model, cost, x0, sequences, noise_streams[k]).costs
    return out
