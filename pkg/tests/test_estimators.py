#!/usr/bin/env python3
"""
🧪 TD errors, lambda-returns, Retrace and standardization
"""

import numpy as np
import pytest

from src.td_regularization.critics import LinearCritic
from src.td_regularization.env_core import Trajectory, Transition, TransitionBatch, collect_trajectory
from src.td_regularization.env_lqr import LqrEnv, LqrSpec, lqr_true_q
from src.td_regularization.errors import (
    ConfigurationError,
    DataError,
    InsufficientDataError,
    UsageError,
)
from src.td_regularization.estimators import (
    EstimatorConfig,
    discounted_returns,
    gae_lambda,
    importance_weights,
    retrace_advantage,
    standardize,
    td_error_q,
    td_error_v,
    td_errors_q,
    td_errors_v,
)
from src.td_regularization.features import PolynomialBasis


@pytest.fixture
def v_critic(rng):
    basis = PolynomialBasis(2, 2)
    return LinearCritic(basis, "v", rng.uniform(-1.0, 1.0, size=basis.output_dim), state_dim=2)


@pytest.fixture
def trajectory(rng, gaussian_policy):
    return collect_trajectory(LqrEnv(LqrSpec(horizon=12)), gaussian_policy, rng, max_steps=12)


def explicit_lambda_return(rewards, values, gamma, lam):
    """(1 - lam) sum_n lam^(n-1) R^(n) + lam^(L-t-1) G_t with V after the last step equal to 0"""
    L = len(rewards)
    out = np.zeros(L)
    for t in range(L):
        remaining = L - t
        total = 0.0
        for n in range(1, remaining):
            n_step = sum(gamma ** i * rewards[t + i] for i in range(n)) + gamma ** n * values[t + n]
            total += (1.0 - lam) * lam ** (n - 1) * n_step
        monte_carlo = sum(gamma ** i * rewards[t + i] for i in range(remaining))
        out[t] = total + lam ** (remaining - 1) * monte_carlo
    return out


def test_td_errors_q_formula(q_critic, make_batch, rng):
    batch = make_batch(rng, n=10, terminal_rate=0.3)
    next_actions = rng.normal(size=(10, 2))
    expected = (
        batch.rewards
        + 0.9 * np.where(batch.terminals, 0.0, q_critic.values(batch.next_states, next_actions))
        - q_critic.values(batch.states, batch.actions)
    )
    np.testing.assert_allclose(td_errors_q(q_critic, batch, next_actions, 0.9), expected)
    np.testing.assert_allclose(td_errors_q(q_critic, batch, lambda s: next_actions, 0.9), expected)


def test_single_transition_helpers_agree_with_batches(q_critic, v_critic, make_batch, rng):
    batch = make_batch(rng, n=1)
    transition = Transition(
        state=batch.states[0],
        action=batch.actions[0],
        reward=float(batch.rewards[0]),
        next_state=batch.next_states[0],
        log_prob=0.0,
        step_index=1,
    )
    next_action = rng.normal(size=(1, 2))
    assert td_error_q(q_critic, transition, next_action, 0.99) == pytest.approx(
        td_errors_q(q_critic, batch, next_action, 0.99)[0]
    )
    assert td_error_v(v_critic, transition, 0.99, final=True) == pytest.approx(
        batch.rewards[0] - v_critic.values(batch.states)[0]
    )


def test_true_lqr_q_has_zero_td_error_without_noise(rng):
    spec = LqrSpec(noise_std=0.0, gamma=0.9)
    K = -0.5 * np.eye(2)
    truth = lqr_true_q(spec, K)
    basis = PolynomialBasis(4, 2)
    states = rng.uniform(-3, 3, size=(25, 2))
    actions = rng.uniform(-3, 3, size=(25, 2))
    # exact weights by least squares on the true values
    features = basis.transform(np.hstack([states, actions]))
    weights = np.linalg.lstsq(features, truth.value(states, actions), rcond=None)[0]
    critic = LinearCritic(basis, "q", weights, state_dim=2)

    next_states = states + actions
    batch = TransitionBatch(
        states=states,
        actions=actions,
        rewards=-np.sum(states ** 2, axis=1) - np.sum(actions ** 2, axis=1),
        next_states=next_states,
        log_probs=np.zeros(25),
        step_indices=np.arange(1, 26),
        terminals=np.zeros(25, dtype=bool),
    )
    np.testing.assert_allclose(td_errors_q(critic, batch, lambda s: s @ K.T, 0.9), 0.0, atol=1e-7)


def test_kind_mismatch_raises(q_critic, v_critic, make_batch, rng):
    batch = make_batch(rng, n=3)
    with pytest.raises(UsageError):
        td_errors_v(q_critic, batch, 0.99)
    with pytest.raises(UsageError):
        td_errors_q(v_critic, batch, batch.actions, 0.99)


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
def test_gae_matches_explicit_lambda_return(v_critic, trajectory, lam):
    config = EstimatorConfig(gamma=0.9, lam=lam)
    result = gae_lambda(v_critic, trajectory, config)
    values = v_critic.values(trajectory.as_batch().states)
    expected = explicit_lambda_return(trajectory.rewards, values, 0.9, lam)
    np.testing.assert_allclose(result.lambda_returns, expected, rtol=1e-10, atol=1e-8)
    np.testing.assert_allclose(result.advantages, expected - values, rtol=1e-10, atol=1e-8)


def random_trajectory(rng, length):
    """Chained random trajectory that ends at its last step"""
    states = rng.uniform(-3.0, 3.0, size=(length + 1, 2))
    trajectory = Trajectory()
    for t in range(length):
        trajectory.append(
            Transition(
                state=states[t],
                action=rng.normal(size=2),
                reward=float(rng.normal(scale=5.0)),
                next_state=states[t + 1],
                log_prob=0.0,
                step_index=t + 1,
                is_terminal=t == length - 1,
            )
        )
    return trajectory


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.95, 1.0])
def test_gae_matches_explicit_lambda_return_on_random_trajectories(rng, lam):
    basis = PolynomialBasis(2, 2)
    for _ in range(100):
        critic = LinearCritic(basis, "v", rng.normal(size=basis.output_dim), state_dim=2)
        trajectory = random_trajectory(rng, int(rng.integers(1, 51)))
        result = gae_lambda(critic, trajectory, EstimatorConfig(gamma=0.99, lam=lam))
        values = critic.values(trajectory.as_batch().states)
        expected = explicit_lambda_return(trajectory.rewards, values, 0.99, lam)
        assert np.max(np.abs(result.lambda_returns - expected)) < 1e-10 * max(1.0, np.max(np.abs(expected)))


def test_lambda_one_is_the_monte_carlo_return(v_critic, trajectory):
    result = gae_lambda(v_critic, trajectory, EstimatorConfig(gamma=0.9, lam=1.0))
    np.testing.assert_allclose(result.lambda_returns, discounted_returns(trajectory.rewards, 0.9), rtol=1e-10)


def test_last_step_does_not_bootstrap(v_critic, trajectory):
    result = gae_lambda(v_critic, trajectory, EstimatorConfig(gamma=0.9, lam=0.5))
    last = trajectory.transitions[-1]
    assert result.td_errors[-1] == pytest.approx(last.reward - v_critic.values(last.state[None])[0])


def test_empty_trajectory_is_rejected(v_critic):
    with pytest.raises(InsufficientDataError):
        gae_lambda(v_critic, Trajectory(), EstimatorConfig())


def test_estimator_config_ranges():
    with pytest.raises(ConfigurationError):
        EstimatorConfig(lam=1.5)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(gamma=-0.1)


def test_retrace_with_on_policy_data_is_gae(v_critic, trajectory):
    config = EstimatorConfig(gamma=0.9, lam=0.95)
    log_probs = trajectory.as_batch().log_probs
    retrace = retrace_advantage(v_critic, trajectory, config, log_probs, log_probs)
    np.testing.assert_allclose(retrace.advantages, gae_lambda(v_critic, trajectory, config).advantages)
    np.testing.assert_array_equal(retrace.weights, 1.0)


def test_retrace_cuts_traces_by_truncated_weights(v_critic, trajectory, rng):
    config = EstimatorConfig(gamma=0.9, lam=0.95)
    behavior = trajectory.as_batch().log_probs
    target = behavior + rng.normal(scale=0.7, size=len(behavior))
    result = retrace_advantage(v_critic, trajectory, config, behavior, target)
    weights = np.minimum(1.0, np.exp(target - behavior))
    np.testing.assert_allclose(result.weights, weights)

    delta = result.td_errors
    L = len(delta)
    expected = np.zeros(L)
    for t in range(L):
        trace = 1.0
        for k in range(t, L):
            if k > t:
                trace *= weights[k]
            expected[t] += (0.9 * 0.95) ** (k - t) * trace * delta[k]
    np.testing.assert_allclose(result.advantages, expected, rtol=1e-10, atol=1e-10)


def test_importance_weights():
    behavior = np.log(np.array([0.5, 0.5, 0.5]))
    target = np.log(np.array([0.25, 0.5, 1.0]))
    np.testing.assert_allclose(importance_weights(target, behavior), [0.5, 1.0, 1.0])
    np.testing.assert_allclose(importance_weights(target, behavior, truncate=False), [0.5, 1.0, 2.0])
    with pytest.raises(DataError):
        importance_weights(np.zeros(1), np.array([-np.inf]))
    with pytest.raises(DataError):
        importance_weights(np.array([1000.0]), np.zeros(1), truncate=False)


def test_standardize():
    out = standardize(np.array([1.0, 2.0, 3.0, 4.0]))
    assert out.mean() == pytest.approx(0.0)
    assert out.std() == pytest.approx(1.0)
    np.testing.assert_allclose(standardize(np.array([1.0, 2.0, 3.0])), [-1.2247449, 0.0, 1.2247449], atol=1e-7)
    np.testing.assert_array_equal(standardize(np.full(5, 3.0)), np.zeros(5))
    with pytest.raises(InsufficientDataError):
        standardize(np.array([]))
