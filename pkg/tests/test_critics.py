#!/usr/bin/env python3
"""
🧪 Linear critics, target copies and the twin pair
"""

import numpy as np
import pytest

from src.td_regularization.critics import LinearCritic, TwinCritic, critic_value, soft_update
from src.td_regularization.errors import ConfigurationError, UsageError
from src.td_regularization.features import PolynomialBasis


def test_soft_update():
    target, source = np.zeros(3), np.ones(3)
    np.testing.assert_allclose(soft_update(target, source, 0.25), 0.25)
    copied = soft_update(target, source, 1.0)
    np.testing.assert_array_equal(copied, source)
    assert copied is not source
    with pytest.raises(ConfigurationError):
        soft_update(target, source, 0.0)


def test_q_critic_needs_actions(q_critic):
    with pytest.raises(UsageError):
        q_critic.values(np.zeros((1, 2)))
    with pytest.raises(UsageError):
        critic_value(q_critic, np.zeros(2))


def test_v_critic_rejects_actions(rng):
    critic = LinearCritic.create(PolynomialBasis(2, 2), "v", 2, rng)
    with pytest.raises(UsageError):
        critic.values(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(UsageError):
        critic.action_gradients(np.zeros((1, 2)), np.zeros((1, 2)))


def test_weight_shape_is_checked():
    with pytest.raises(ConfigurationError):
        LinearCritic(PolynomialBasis(2, 2), "v", np.zeros(3), state_dim=2)


def test_values_are_linear_in_features(q_critic, rng):
    states, actions = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    features = q_critic.basis.transform(np.hstack([states, actions]))
    np.testing.assert_allclose(q_critic.values(states, actions), features @ q_critic.weights)
    assert critic_value(q_critic, states[0], actions[0]) == pytest.approx(q_critic.values(states, actions)[0])


def test_action_gradients_match_finite_differences(q_critic, rng):
    states, actions = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    eps = 1e-6
    numeric = np.zeros_like(actions)
    for j in range(2):
        step = np.zeros(2)
        step[j] = eps
        numeric[:, j] = (q_critic.values(states, actions + step) - q_critic.values(states, actions - step)) / (2 * eps)
    np.testing.assert_allclose(q_critic.action_gradients(states, actions), numeric, atol=1e-6)


def test_target_starts_as_copy_and_tracks_online_weights(rng):
    critic = LinearCritic.create(PolynomialBasis(4, 2), "q", 2, rng, with_target=True)
    np.testing.assert_array_equal(critic.target_weights, critic.weights)
    start = critic.target_weights.copy()
    critic.weights = critic.weights + 1.0
    critic.update_target(0.5)
    np.testing.assert_allclose(critic.target_weights, start + 0.5)


def test_online_weights_stand_in_without_target(q_critic, rng):
    states, actions = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    np.testing.assert_array_equal(q_critic.target_values(states, actions), q_critic.values(states, actions))
    q_critic.update_target(0.5)
    assert q_critic.target_weights is None


def test_twin_min_picks_the_smaller_target(rng):
    basis = PolynomialBasis(4, 2)
    first = LinearCritic(basis, "q", rng.uniform(-1, 1, basis.output_dim), 2)
    second = LinearCritic(basis, "q", rng.uniform(-1, 1, basis.output_dim), 2)
    twin = TwinCritic(first, second)
    states, actions = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    minimum, chosen = twin.min_target_values(states, actions)
    np.testing.assert_allclose(minimum, np.minimum(first.values(states, actions), second.values(states, actions)))
    np.testing.assert_array_equal(chosen, np.where(second.values(states, actions) < first.values(states, actions), 1, 0))
    assert list(twin) == [first, second]


def test_twin_requires_shared_basis(rng):
    first = LinearCritic.create(PolynomialBasis(4, 2), "q", 2, rng)
    second = LinearCritic.create(PolynomialBasis(4, 2), "q", 2, rng)
    with pytest.raises(ConfigurationError):
        TwinCritic(first, second)
