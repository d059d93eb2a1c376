"""Closed-loop rollouts of a policy on a simulation environment.

An environment exposes batch-first hooks (begin_batch / step_batch /
observe_batch / constraints_batch / rewards_batch plus shape metadata);
the bioreactor, the learned surrogate and the toy problems used in tests
all satisfy the same protocol. Each rollout owns one RNG stream and all
of its draws happen in a fixed order (episode context, action noise
block, disturbance block, measurement block), so results are identical
no matter how rollouts are grouped into batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import (
    HistoryWindow,
    PolicyConfig,
    build_input,
    forward,
    scale_control,
    scale_state,
    squash,
)

__all__ = ["Trajectory", "RolloutBatch", "rollout", "rollout_batch"]


@dataclass
class Trajectory:
    """One closed-loop episode.

    constraints holds g_{j,t} for t = 1..T as a (n_constraints, T)
    matrix; floor_flags marks steps where the biomass floor was engaged
    when evaluating the ratio constraint.
    """

    states: np.ndarray  # (T+1, state_dim), true states
    observations: np.ndarray  # (T+1, state_dim)
    controls: np.ndarray  # (T, n_controls)
    presquash: np.ndarray  # (T, n_controls)
    rewards: np.ndarray  # (T+1,)
    constraints: np.ndarray  # (n_constraints, T)
    floor_flags: np.ndarray  # (T,) bool

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass
class RolloutBatch:
    """Stacked arrays for a batch of rollouts collected under one policy."""

    states: np.ndarray  # (B, T+1, state_dim)
    observations: np.ndarray  # (B, T+1, state_dim)
    controls: np.ndarray  # (B, T, n_controls)
    presquash: np.ndarray  # (B, T, n_controls)
    inputs: np.ndarray  # (B, T, input_dim), policy input rows
    rewards: np.ndarray  # (B, T+1)
    constraints: np.ndarray  # (B, n_constraints, T)
    floor_flags: np.ndarray  # (B, T) bool

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=-1)

    def c_values(self) -> np.ndarray:
        """Worst constraint value per rollout; -inf when unconstrained."""
        if self.constraints.shape[1] == 0:
            return np.full(self.size, -np.inf)
        return self.constraints.max(axis=(1, 2))

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            states=self.states[i].copy(),
            observations=self.observations[i].copy(),
            controls=self.controls[i].copy(),
            presquash=self.presquash[i].copy(),
            rewards=self.rewards[i].copy(),
            constraints=self.constraints[i].copy(),
            floor_flags=self.floor_flags[i].copy(),
        )

    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.size)]


def rollout_batch(
    env,
    pcfg: PolicyConfig,
    theta: np.ndarray,
    streams: list[np.random.Generator],
) -> RolloutBatch:
    """Roll the policy through `env` once per stream."""
    batch = len(streams)
    horizon = env.horizon
    sd = env.state_dim
    n_u = pcfg.n_controls

    x, params = env.begin_batch(streams)
    action_z = np.stack([rng.normal(size=(horizon, n_u)) for rng in streams])
    process_z = np.stack([rng.normal(size=(horizon, sd)) for rng in streams])
    measure_z = np.stack([rng.normal(size=(horizon + 1, sd)) for rng in streams])

    states = np.empty((batch, horizon + 1, sd))
    observations = np.empty_like(states)
    controls = np.empty((batch, horizon, n_u))
    presquash = np.empty_like(controls)
    inputs = np.empty((batch, horizon, pcfg.input_dim))

    states[:, 0] = x
    obs = env.observe_batch(x, measure_z[:, 0])
    observations[:, 0] = obs
    hist = HistoryWindow.empty(pcfg, batch)

    for t in range(horizon):
        inp = build_input(pcfg, obs, hist)
        mu, logstd, _ = forward(pcfg, theta, inp)
        a = mu + np.exp(logstd) * action_z[:, t]
        u = squash(pcfg, a)
        x_next = env.step_batch(x, u, params, process_z[:, t])
        obs_next = env.observe_batch(x_next, measure_z[:, t + 1])
        hist = hist.push(pcfg, scale_state(pcfg, obs), scale_control(pcfg, u))

        inputs[:, t] = inp
        presquash[:, t] = a
        controls[:, t] = u
        states[:, t + 1] = x_next
        observations[:, t + 1] = obs_next
        x, obs = x_next, obs_next

    rewards = env.rewards_batch(states, controls)
    flat = states[:, 1:, :].reshape(batch * horizon, sd)
    g_flat, floored_flat = env.constraints_batch(flat)
    constraints = g_flat.reshape(batch, horizon, -1).transpose(0, 2, 1)
    floor_flags = floored_flat.reshape(batch, horizon)
    return RolloutBatch(
        states=states,
        observations=observations,
        controls=controls,
        presquash=presquash,
        inputs=inputs,
        rewards=rewards,
        constraints=constraints,
        floor_flags=floor_flags,
    )


def rollout(env, pcfg: PolicyConfig, theta: np.ndarray, stream: np.random.Generator) -> Trajectory:
    """Single rollout; identical draws to a batch of size one."""
    return rollout_batch(env, pcfg, theta, [stream]).trajectory(0)
