#!/usr/bin/env python3
"""
🎯 Deterministic policy gradient learners (DPG, DPG NO-TAR, TD3) with the
TD-regularized actor objective

    J(theta) = mean Q(s, pi(s); w)
    G(theta) = mean (r + gamma Q(s', pi(s') [+ xi]; w_target) - Q(s, a; w))^2

Online protocol: one environment step, then (after warm-up) one critic step
on a replay mini-batch and, every ``policy_delay`` critic steps, one actor step.
"""

from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np
import structlog

from src.td_regularization.critic_fitting import q_critic_adam_step
from src.td_regularization.critics import LinearCritic, TwinCritic, soft_update
from src.td_regularization.env_core import (
    EnvironmentContract,
    ReplayMemory,
    Transition,
    TransitionBatch,
    DETERMINISTIC_LOG_PROB,
)
from src.td_regularization.errors import ConfigurationError
from src.td_regularization.estimators import td_errors_q
from src.td_regularization.learner import Learner, TrialStreams
from src.td_regularization.optim import AdamState, adam_step
from src.td_regularization.penalty import PenaltySchedule
from src.td_regularization.policies import DeterministicPolicy

logger = structlog.get_logger(__name__)


def _penalty_gradient(
    policy: DeterministicPolicy,
    batch: TransitionBatch,
    gamma: float,
    td_errors: np.ndarray,
    next_action_grads: np.ndarray,
) -> np.ndarray:
    """mean 2 gamma delta grad_theta pi(s') grad_a' Q(s', a')"""
    live = (~batch.terminals).astype(float)
    per_sample = policy.mean_vjp(batch.next_states, next_action_grads)
    return np.mean(2.0 * gamma * (td_errors * live)[:, None] * per_sample, axis=0)


def dpg_gradient(
    policy: DeterministicPolicy,
    critic: LinearCritic,
    batch: TransitionBatch,
    eta: float,
    gamma: float = 0.99,
) -> np.ndarray:
    """grad J - eta grad G; the bootstrap uses the critic's target weights"""
    actions = policy.means(batch.states)
    grad_j = policy.mean_vjp(batch.states, critic.action_gradients(batch.states, actions)).mean(axis=0)
    if eta == 0.0:
        return grad_j

    bootstrap_weights = critic.weights if critic.target_weights is None else critic.target_weights
    next_actions = policy.means(batch.next_states)
    td_errors = td_errors_q(critic, batch, next_actions, gamma)
    next_grads = critic.action_gradients(batch.next_states, next_actions, weights=bootstrap_weights)
    return grad_j - eta * _penalty_gradient(policy, batch, gamma, td_errors, next_grads)


def dpg_surrogate(
    theta: np.ndarray, policy: DeterministicPolicy, critic: LinearCritic, batch: TransitionBatch, eta: float, gamma: float
) -> float:
    candidate = policy.with_params(theta)
    objective = float(np.mean(critic.values(batch.states, candidate.means(batch.states))))
    if eta == 0.0:
        return objective
    td_errors = td_errors_q(critic, batch, candidate.means(batch.next_states), gamma)
    return objective - eta * float(np.mean(td_errors ** 2))


def target_policy_noise(
    shape: Tuple[int, ...], sigma_t: float, rng: np.random.Generator, noise_std: float = 2.0, clip_ratio: float = 0.5
) -> np.ndarray:
    """xi ~ N(0, noise_std) clipped to [-clip_ratio sigma_t, clip_ratio sigma_t]"""
    bound = clip_ratio * sigma_t
    return np.clip(rng.normal(0.0, noise_std, size=shape), -bound, bound)


def td3_targets(
    twin: TwinCritic,
    policy_target: DeterministicPolicy,
    batch: TransitionBatch,
    sigma_t: float,
    rng: np.random.Generator,
    gamma: float = 0.99,
    noise_std: float = 2.0,
    clip_ratio: float = 0.5,
) -> Tuple[np.ndarray, np.ndarray]:
    """(r + gamma min_j Q(s', pi_target(s') + xi; w_target_j), xi)"""
    next_actions = policy_target.means(batch.next_states)
    noise = target_policy_noise(next_actions.shape, sigma_t, rng, noise_std, clip_ratio)
    minimum, _ = twin.min_target_values(batch.next_states, next_actions + noise)
    bootstrap = np.where(batch.terminals, 0.0, minimum)
    return batch.rewards + gamma * bootstrap, noise


def td3_gradient(
    policy: DeterministicPolicy,
    twin: TwinCritic,
    batch: TransitionBatch,
    eta: float,
    noise: np.ndarray,
    gamma: float = 0.99,
) -> np.ndarray:
    """Actor gradient driven by the first critic; the penalty follows the minimizing target critic"""
    first = twin.first
    actions = policy.means(batch.states)
    grad_j = policy.mean_vjp(batch.states, first.action_gradients(batch.states, actions)).mean(axis=0)
    if eta == 0.0:
        return grad_j

    noisy_next = policy.means(batch.next_states) + noise
    minimum, chosen = twin.min_target_values(batch.next_states, noisy_next)
    td_errors = td_errors_q(first, batch, None, gamma, bootstrap_values=minimum)
    next_grads = np.empty_like(noisy_next)
    for index, critic in enumerate(twin):
        rows = chosen == index
        if np.any(rows):
            next_grads[rows] = critic.action_gradients(
                batch.next_states[rows], noisy_next[rows], weights=critic.target_weights
            )
    return grad_j - eta * _penalty_gradient(policy, batch, gamma, td_errors, next_grads)


def td3_surrogate(
    theta: np.ndarray,
    policy: DeterministicPolicy,
    twin: TwinCritic,
    batch: TransitionBatch,
    eta: float,
    noise: np.ndarray,
    gamma: float,
) -> float:
    candidate = policy.with_params(theta)
    objective = float(np.mean(twin.first.values(batch.states, candidate.means(batch.states))))
    if eta == 0.0:
        return objective
    minimum, _ = twin.min_target_values(batch.next_states, candidate.means(batch.next_states) + noise)
    td_errors = td_errors_q(twin.first, batch, None, gamma, bootstrap_values=minimum)
    return objective - eta * float(np.mean(td_errors ** 2))


@dataclass(frozen=True)
class DpgSettings:
    algorithm: Literal["dpg", "td3"] = "dpg"
    batch_size: int = 32
    warmup_steps: int = 100
    replay_capacity: Optional[int] = None
    actor_lr: float = 0.0005
    critic_lr: float = 0.01
    critic_tau: float = 1.0
    target_actor_tau: Optional[float] = None
    policy_delay: int = 1
    target_noise_std: float = 2.0
    target_noise_clip: float = 0.5


class DeterministicPolicyGradient(Learner):
    def __init__(
        self,
        env: EnvironmentContract,
        policy: DeterministicPolicy,
        critic: Union[LinearCritic, TwinCritic],
        schedule: PenaltySchedule,
        streams: TrialStreams,
        settings: DpgSettings,
        regularized: bool,
    ):
        super().__init__(env, schedule, streams, regularized)
        if settings.algorithm == "td3" and not isinstance(critic, TwinCritic):
            raise ConfigurationError("TD3 needs twin critics")
        if settings.algorithm == "dpg" and not isinstance(critic, LinearCritic):
            raise ConfigurationError("DPG uses a single Q-critic")
        if settings.policy_delay < 1:
            raise ConfigurationError("policy_delay must be >= 1")
        self.policy = policy
        self.critic = critic
        self.settings = settings
        self.memory = ReplayMemory(settings.replay_capacity)
        self.target_theta = None if settings.target_actor_tau is None else policy.theta.copy()

        self.actor_adam = AdamState.create(policy.n_params, settings.actor_lr)
        critics = list(critic) if isinstance(critic, TwinCritic) else [critic]
        self.critic_adams = [AdamState.create(c.weights.size, settings.critic_lr) for c in critics]

        self.true_state = None
        self.observation = None
        self.episode_step = 0

    @property
    def first_critic(self) -> LinearCritic:
        return self.critic.first if isinstance(self.critic, TwinCritic) else self.critic

    def _target_policy(self) -> DeterministicPolicy:
        if self.target_theta is None:
            return self.policy
        return self.policy.with_params(self.target_theta)

    def _reset_episode(self) -> None:
        self.true_state = self.env.sample_initial_state(self.streams.env)
        self.observation = self.env.observe(self.true_state, self.streams.env)
        self.episode_step = 0

    def iterate(self) -> None:
        if self.observation is None or self.episode_step >= self.env.horizon:
            self._reset_episode()

        action, _ = self.policy.act(self.observation, self.streams.policy, explore=True)
        next_state, reward = self.env.step(self.true_state, action, self.streams.env)
        next_observation = self.env.observe(next_state, self.streams.env)
        self.episode_step += 1
        self.memory.push([Transition(
            state=self.observation,
            action=action,
            reward=float(reward),
            next_state=next_observation,
            log_prob=DETERMINISTIC_LOG_PROB,
            step_index=self.episode_step,
            is_terminal=self.episode_step >= self.env.horizon,
        )])
        self.true_state, self.observation = next_state, next_observation
        self.progress += 1

        if len(self.memory) >= max(self.settings.warmup_steps, self.settings.batch_size):
            self._learn()
        self.policy.decay_exploration()

    def _learn(self) -> None:
        transitions = self.memory.sample(self.settings.batch_size, self.streams.replay)
        batch = TransitionBatch.from_transitions(transitions)
        gamma = self.env.gamma
        target_policy = self._target_policy()

        noise = None
        if isinstance(self.critic, TwinCritic):
            targets, noise = td3_targets(
                self.critic,
                target_policy,
                batch,
                self.policy.exploration_std,
                self.streams.misc,
                gamma,
                self.settings.target_noise_std,
                self.settings.target_noise_clip,
            )
            for index, critic in enumerate(self.critic):
                td_errors = targets - critic.values(batch.states, batch.actions)
                self.critic_adams[index] = q_critic_adam_step(critic, self.critic_adams[index], batch, td_errors)
            self.critic.update_targets(self.settings.critic_tau)
        else:
            td_errors = td_errors_q(self.critic, batch, target_policy.means(batch.next_states), gamma)
            self.critic_adams[0] = q_critic_adam_step(self.critic, self.critic_adams[0], batch, td_errors)
            self.critic.update_target(self.settings.critic_tau)
        self.stats["critic_updates"] += 1

        if self.stats["critic_updates"] % self.settings.policy_delay != 0:
            return
        if noise is not None:
            gradient = td3_gradient(self.policy, self.critic, batch, self.eta, noise, gamma)
        else:
            gradient = dpg_gradient(self.policy, self.critic, batch, self.eta, gamma)
        theta, self.actor_adam = adam_step(self.actor_adam, self.policy.theta, gradient, maximize=True)
        self.policy = self.policy.with_params(theta)
        if self.target_theta is not None:
            self.target_theta = soft_update(self.target_theta, theta, self.settings.target_actor_tau)
        self._after_actor_update()

    def td_errors(self, batch: TransitionBatch) -> np.ndarray:
        """Noise-free TD errors of the first critic under the current policy"""
        critic = self.first_critic
        bootstrap = critic.values(batch.next_states, self.policy.means(batch.next_states))
        return td_errors_q(critic, batch, None, self.env.gamma, bootstrap_values=bootstrap)

    def q_values(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.first_critic.values(states, actions)
