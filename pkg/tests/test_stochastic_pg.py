#!/usr/bin/env python3
"""
🧪 Stochastic policy gradient: analytic gradients against finite differences of the batch objective
"""

import numpy as np
import pytest

from src.td_regularization.critics import LinearCritic
from src.td_regularization.env_lqr import LqrEnv, LqrSpec
from src.td_regularization.errors import ConfigurationError
from src.td_regularization.features import IdentityBasis, PolynomialBasis
from src.td_regularization.learner import TrialStreams
from src.td_regularization.penalty import PenaltySchedule
from src.td_regularization.policies import GaussianPolicy
from src.td_regularization.stochastic_pg import (
    SpgSettings,
    StochasticPolicyGradient,
    _next_action_samples,
    clip_gradient_norm,
    spg_gradient,
    spg_surrogate,
)

# seeds of the random instances each gradient oracle is checked on
RANDOM_INSTANCES = list(range(20))


@pytest.mark.parametrize("rng", RANDOM_INSTANCES, indirect=True)
@pytest.mark.parametrize("eta", [0.0, 0.1, 2.0])
@pytest.mark.parametrize("terminal_rate", [0.0, 0.3])
def test_mean_mode_gradient_matches_finite_differences(
    rng, gaussian_policy, q_critic, make_batch, finite_difference, relative_error, eta, terminal_rate
):
    batch = make_batch(rng, policy=gaussian_policy, terminal_rate=terminal_rate)
    q_values = q_critic.values(batch.states, batch.actions)
    analytic = spg_gradient(gaussian_policy, q_critic, batch, eta, gamma=0.9, clip_norm=None)
    numeric = finite_difference(
        lambda theta: spg_surrogate(theta, gaussian_policy, q_critic, batch, eta, 0.9, q_values),
        gaussian_policy.theta,
    )
    assert relative_error(analytic, numeric) < 1e-5


@pytest.mark.parametrize("rng", RANDOM_INSTANCES, indirect=True)
@pytest.mark.parametrize("eta", [0.1, 1.0])
def test_sampled_mode_gradient_matches_finite_differences(
    rng, gaussian_policy, q_critic, make_batch, finite_difference, relative_error, eta
):
    batch = make_batch(rng, policy=gaussian_policy, terminal_rate=0.2)
    samples = _next_action_samples(gaussian_policy, batch.next_states, 5, rng)
    q_values = q_critic.values(batch.states, batch.actions)
    analytic = spg_gradient(
        gaussian_policy,
        q_critic,
        batch,
        eta,
        gamma=0.9,
        next_action_mode="sampled",
        next_action_samples=samples,
        clip_norm=None,
    )
    numeric = finite_difference(
        lambda theta: spg_surrogate(
            theta, gaussian_policy, q_critic, batch, eta, 0.9, q_values, "sampled", samples
        ),
        gaussian_policy.theta,
    )
    assert relative_error(analytic, numeric) < 1e-5


def test_sampled_mode_needs_samples(rng, gaussian_policy, q_critic, make_batch):
    batch = make_batch(rng, policy=gaussian_policy)
    with pytest.raises(ConfigurationError):
        spg_gradient(gaussian_policy, q_critic, batch, 0.1, next_action_mode="sampled")


def test_zero_eta_is_the_plain_policy_gradient(rng, gaussian_policy, q_critic, make_batch):
    batch = make_batch(rng, policy=gaussian_policy)
    q_values = q_critic.values(batch.states, batch.actions)
    expected = np.mean(gaussian_policy.scores(batch.states, batch.actions) * q_values[:, None], axis=0)
    np.testing.assert_array_equal(spg_gradient(gaussian_policy, q_critic, batch, 0.0, clip_norm=None), expected)


def test_reinforce_ignores_eta_and_needs_returns(rng, gaussian_policy, make_batch):
    batch = make_batch(rng, policy=gaussian_policy)
    returns = rng.normal(size=len(batch))
    plain = spg_gradient(gaussian_policy, None, batch, 0.0, mode="reinforce", q_values=returns, clip_norm=None)
    penalized = spg_gradient(gaussian_policy, None, batch, 5.0, mode="reinforce", q_values=returns, clip_norm=None)
    np.testing.assert_array_equal(plain, penalized)
    with pytest.raises(ConfigurationError):
        spg_gradient(gaussian_policy, None, batch, 0.0, mode="reinforce")


def test_clip_gradient_norm():
    g = np.array([3.0, 4.0])
    np.testing.assert_allclose(clip_gradient_norm(g, 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(clip_gradient_norm(g, 10.0), g)
    np.testing.assert_array_equal(clip_gradient_norm(g, None), g)


def make_learner(seed, mode="spg", eta0=0.1, regularized=True, **settings):
    streams = TrialStreams.from_seed(seed)
    env = LqrEnv(LqrSpec())
    policy = GaussianPolicy.create(IdentityBasis(2), 2, "diagonal", 5.0, use_bias=False, gain=-0.3 * np.eye(2))
    basis = PolynomialBasis(4, 2)
    critic = LinearCritic.create(basis, "q", 2, streams.init) if mode == "spg" else None
    return StochasticPolicyGradient(
        env,
        policy,
        critic,
        PenaltySchedule(eta0=eta0, kappa=0.5),
        streams,
        SpgSettings(mode=mode, episode_steps=40, **{"critic_solver": "lstd", **settings}),
        regularized,
    )


def test_iteration_updates_policy_critic_and_eta():
    learner = make_learner(3)
    start = learner.policy.theta.copy()
    learner.iterate()
    learner.iterate()
    assert learner.progress == 2
    assert learner.stats["actor_updates"] == 2
    assert learner.stats["critic_updates"] == 2
    assert learner.eta == pytest.approx(0.1 * 0.25)
    assert not np.array_equal(learner.policy.theta, start)
    assert np.linalg.norm(learner.policy.theta - start) <= 2 * 0.01 + 1e-12


def test_reinforce_learner_is_never_regularized():
    learner = make_learner(3, mode="reinforce")
    assert learner.eta == 0.0
    learner.iterate()
    assert learner.progress == 1
    assert learner.q_values(np.zeros((1, 2)), np.zeros((1, 2))) is None


def test_spg_needs_a_critic():
    streams = TrialStreams.from_seed(0)
    policy = GaussianPolicy.create(IdentityBasis(2), 2, "diagonal", 1.0, use_bias=False)
    with pytest.raises(ConfigurationError):
        StochasticPolicyGradient(LqrEnv(), policy, None, PenaltySchedule(), streams, SpgSettings(), True)


def test_same_seed_same_trajectory_of_parameters():
    first, second = make_learner(11), make_learner(11)
    for _ in range(3):
        first.iterate()
        second.iterate()
    np.testing.assert_array_equal(first.policy.theta, second.policy.theta)
    np.testing.assert_array_equal(first.critic.weights, second.critic.weights)


def test_zero_eta0_matches_the_unregularized_learner():
    regularized = make_learner(5, eta0=0.0, regularized=True)
    plain = make_learner(5, eta0=0.0, regularized=False)
    for _ in range(3):
        regularized.iterate()
        plain.iterate()
    np.testing.assert_array_equal(regularized.policy.theta, plain.policy.theta)


def test_sampled_next_actions_learner_runs():
    learner = make_learner(2, next_action_mode="sampled", next_action_count=3)
    learner.iterate()
    assert learner.policy.is_finite()
