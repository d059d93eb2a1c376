"""Shared test fixtures: tiny policy configs and an analytic bandit env."""

import numpy as np
import pytest

from ccpo.policy import PolicyConfig


class QuadraticBanditEnv:
    """One-step unconstrained problem with a known optimum.

    The terminal reward is -(u - target)^2, so the optimal policy
    concentrates on u = target; the environment protocol matches the
    reactor's so the full trainer runs on it unchanged.
    """

    state_dim = 1
    n_controls = 1
    n_constraints = 0

    def __init__(self, target=2.0, bounds=(-10.0, 10.0)):
        self.target = target
        self.horizon = 1
        self.control_bounds = np.array([bounds])
        self.measurement_std = np.zeros(1)

    def begin_batch(self, streams):
        return np.zeros((len(streams), 1)), None

    def step_batch(self, x, u, params, w_normals):
        return x

    def observe_batch(self, x, v_normals):
        return x

    def constraints_batch(self, x):
        n = x.shape[0]
        return np.zeros((n, 0)), np.zeros(n, dtype=bool)

    def rewards_batch(self, states, controls):
        u = controls[..., 0, 0]
        final = -((u - self.target) ** 2)
        zeros = np.zeros_like(final)
        return np.stack([zeros, final], axis=-1)


@pytest.fixture
def bandit_env():
    return QuadraticBanditEnv()


@pytest.fixture
def bandit_policy_cfg():
    return PolicyConfig(
        control_bounds=((-10.0, 10.0),),
        state_dim=1,
        hidden=(),
        window=0,
        state_scales=(1.0,),
    )


@pytest.fixture
def small_policy_cfg():
    return PolicyConfig(
        control_bounds=((120.0, 400.0), (0.0, 40.0)),
        state_dim=3,
        hidden=(8, 8),
        window=1,
        state_scales=(10.0, 800.0, 0.2),
    )
