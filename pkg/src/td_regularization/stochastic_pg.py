#!/usr/bin/env python3
"""
🎲 Stochastic policy gradient with TD-regularization (and REINFORCE)

Batch objective, evaluated around the sampling policy theta_old:

    L(theta) = mean[rho Q(s,a)] - eta * mean[rho delta(theta)^2]
    delta(theta) = r + gamma E_{a' ~ pi_theta(.|s')}[Q(s',a')] - Q(s,a)

with rho = pi_theta(a|s) / pi_old(a|s). The inner expectation is either the
Q-value at the policy mean ("mean") or an importance-weighted average over
fixed action samples ("sampled"). REINFORCE replaces Q by Monte Carlo
returns and never regularizes.
"""

from dataclasses import dataclass
from typing import List, Literal, Optional

import numpy as np
import structlog

from src.td_regularization.critic_fitting import QSolver, fit_q_critic_batch
from src.td_regularization.critics import LinearCritic
from src.td_regularization.env_core import EnvironmentContract, TransitionBatch, collect_trajectory
from src.td_regularization.errors import ConfigurationError, NumericalError
from src.td_regularization.estimators import discounted_returns, td_errors_q
from src.td_regularization.learner import Learner, TrialStreams
from src.td_regularization.penalty import PenaltySchedule
from src.td_regularization.policies import GaussianPolicy

logger = structlog.get_logger(__name__)

SpgMode = Literal["spg", "reinforce"]
NextActionMode = Literal["mean", "sampled"]


def clip_gradient_norm(gradient: np.ndarray, max_norm: Optional[float]) -> np.ndarray:
    if max_norm is None:
        return gradient
    norm = np.linalg.norm(gradient)
    if norm > max_norm:
        return gradient * (max_norm / norm)
    return gradient


def _pad_mean_block(policy: GaussianPolicy, mean_block: np.ndarray) -> np.ndarray:
    """Extend per-sample mean-parameter gradients with zeros for the covariance block"""
    return np.hstack([mean_block, np.zeros((mean_block.shape[0], policy.n_cov))])


def _next_action_samples(
    policy: GaussianPolicy, next_states: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """(count, n, action_dim) samples a' ~ pi(.|s')"""
    return np.stack([policy.sample_actions(next_states, rng) for _ in range(count)])


def spg_surrogate(
    theta: np.ndarray,
    policy: GaussianPolicy,
    critic: Optional[LinearCritic],
    batch: TransitionBatch,
    eta: float,
    gamma: float,
    q_values: np.ndarray,
    next_action_mode: NextActionMode = "mean",
    next_action_samples: Optional[np.ndarray] = None,
) -> float:
    """Batch objective L(theta) with the critic and the data held fixed"""
    candidate = policy.with_params(theta)
    rho = np.exp(candidate.log_probs(batch.states, batch.actions) - policy.log_probs(batch.states, batch.actions))
    objective = float(np.mean(rho * q_values))
    if eta == 0.0:
        return objective

    if next_action_mode == "mean":
        bootstrap = critic.values(batch.next_states, candidate.means(batch.next_states))
    else:
        bootstrap = np.zeros(len(batch))
        for sample in next_action_samples:
            weight = np.exp(
                candidate.log_probs(batch.next_states, sample) - policy.log_probs(batch.next_states, sample)
            )
            bootstrap += weight * critic.values(batch.next_states, sample)
        bootstrap /= len(next_action_samples)
    td_errors = td_errors_q(critic, batch, None, gamma, bootstrap_values=bootstrap)
    return objective - eta * float(np.mean(rho * td_errors ** 2))


def spg_gradient(
    policy: GaussianPolicy,
    critic: Optional[LinearCritic],
    batch: TransitionBatch,
    eta: float,
    mode: SpgMode = "spg",
    gamma: float = 0.99,
    q_values: Optional[np.ndarray] = None,
    next_action_mode: NextActionMode = "mean",
    next_action_samples: Optional[np.ndarray] = None,
    clip_norm: Optional[float] = 1.0,
) -> np.ndarray:
    """grad J - eta grad G averaged over the batch, rescaled to norm ``clip_norm`` if longer.

    In "reinforce" mode ``q_values`` must hold Monte Carlo returns and eta is
    ignored.
    """
    if mode == "reinforce":
        if q_values is None:
            raise ConfigurationError("REINFORCE needs Monte Carlo returns")
        eta = 0.0
    elif q_values is None:
        q_values = critic.values(batch.states, batch.actions)

    scores = policy.scores(batch.states, batch.actions)
    gradient = np.mean(scores * q_values[:, None], axis=0)
    if eta == 0.0:
        return clip_gradient_norm(gradient, clip_norm)

    live = ~batch.terminals
    if next_action_mode == "mean":
        next_means = policy.means(batch.next_states)
        td_errors = td_errors_q(critic, batch, next_means, gamma)
        action_grads = critic.action_gradients(batch.next_states, next_means)
        bootstrap_grads = _pad_mean_block(policy, policy.mean_vjp(batch.next_states, action_grads))
    else:
        if next_action_samples is None:
            raise ConfigurationError("sampled next actions are required in 'sampled' mode")
        bootstrap = np.zeros(len(batch))
        bootstrap_grads = np.zeros_like(scores)
        for sample in next_action_samples:
            sample_values = critic.values(batch.next_states, sample)
            bootstrap += sample_values
            bootstrap_grads += policy.scores(batch.next_states, sample) * sample_values[:, None]
        bootstrap /= len(next_action_samples)
        bootstrap_grads /= len(next_action_samples)
        td_errors = td_errors_q(critic, batch, None, gamma, bootstrap_values=bootstrap)

    penalty_gradient = np.mean(
        scores * (td_errors ** 2)[:, None]
        + 2.0 * gamma * (td_errors * live)[:, None] * bootstrap_grads,
        axis=0,
    )
    return clip_gradient_norm(gradient - eta * penalty_gradient, clip_norm)


@dataclass(frozen=True)
class SpgSettings:
    mode: SpgMode = "spg"
    episodes_per_iteration: int = 1
    episode_steps: int = 150
    learning_rate: float = 0.01
    clip_norm: Optional[float] = 1.0
    next_action_mode: NextActionMode = "mean"
    next_action_count: int = 10
    critic_solver: QSolver = "iterated"
    critic_sweeps: int = 100
    critic_tol: float = 1e-8
    ridge: float = 1e-6


class StochasticPolicyGradient(Learner):
    """One batch of trajectories, one critic fit and one gradient step per iteration"""

    def __init__(
        self,
        env: EnvironmentContract,
        policy: GaussianPolicy,
        critic: Optional[LinearCritic],
        schedule: PenaltySchedule,
        streams: TrialStreams,
        settings: SpgSettings,
        regularized: bool,
    ):
        super().__init__(env, schedule, streams, regularized and settings.mode == "spg")
        if settings.mode == "spg" and critic is None:
            raise ConfigurationError("SPG needs a Q-critic")
        self.policy = policy
        self.critic = critic
        self.settings = settings

    def _collect(self) -> List:
        return [
            collect_trajectory(
                self.env,
                self.policy,
                self.streams.env,
                self.settings.episode_steps,
                policy_rng=self.streams.policy,
            )
            for _ in range(self.settings.episodes_per_iteration)
        ]

    def iterate(self) -> None:
        trajectories = self._collect()
        batch = TransitionBatch.from_transitions([t for trajectory in trajectories for t in trajectory])
        samples = None
        if self.settings.next_action_mode == "sampled":
            samples = _next_action_samples(
                self.policy, batch.next_states, self.settings.next_action_count, self.streams.misc
            )

        if self.settings.mode == "reinforce":
            q_values = np.concatenate([discounted_returns(t.rewards, self.env.gamma) for t in trajectories])
        else:
            self.critic.weights, sweeps = fit_q_critic_batch(
                self.critic,
                batch,
                self.policy.means(batch.next_states),
                self.env.gamma,
                ridge=self.settings.ridge,
                tol=self.settings.critic_tol,
                max_sweeps=self.settings.critic_sweeps,
                solver=self.settings.critic_solver,
            )
            self.stats["critic_updates"] += 1
            self.stats["last_critic_sweeps"] = sweeps
            q_values = self.critic.values(batch.states, batch.actions)

        gradient = spg_gradient(
            self.policy,
            self.critic,
            batch,
            self.eta,
            mode=self.settings.mode,
            gamma=self.env.gamma,
            q_values=q_values,
            next_action_mode=self.settings.next_action_mode,
            next_action_samples=samples,
            clip_norm=self.settings.clip_norm,
        )
        if not np.all(np.isfinite(gradient)):
            raise NumericalError("non-finite policy gradient")
        self.policy = self.policy.with_params(self.policy.theta + self.settings.learning_rate * gradient)
        self._after_actor_update()
        self.progress += 1
        logger.debug("spg_iteration", iteration=self.progress, grad_norm=float(np.linalg.norm(gradient)))

    def td_errors(self, batch: TransitionBatch) -> np.ndarray:
        if self.critic is None:
            return np.full(len(batch), np.nan)
        return td_errors_q(self.critic, batch, self.policy.means(batch.next_states), self.env.gamma)

    def q_values(self, states: np.ndarray, actions: np.ndarray) -> Optional[np.ndarray]:
        return None if self.critic is None else self.critic.values(states, actions)
