#!/usr/bin/env python3
"""
🎯 Critic fitting

- V-critics: ridge least squares on lambda-return targets
- batch Q-critics: repeated least-squares sweeps toward r + gamma Q(s', a+)
  with the bootstrap frozen inside each sweep (or the LSTD fixed point)
- online Q-critics: one ADAM semi-gradient step on the mini-batch TD error
"""

from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq

from src.td_regularization.critics import LinearCritic
from src.td_regularization.env_core import Trajectory, TransitionBatch
from src.td_regularization.errors import ConfigurationError, NumericalError, UsageError
from src.td_regularization.estimators import EstimatorConfig, gae_lambda, retrace_advantage
from src.td_regularization.optim import AdamState, adam_step
from src.td_regularization.policies import GaussianPolicy

logger = structlog.get_logger(__name__)

QSolver = Literal["iterated", "lstd"]


class RidgeSolver:
    """Cholesky factor of (Phi'Phi + ridge I), reused across right-hand sides"""

    def __init__(self, features: np.ndarray, ridge: float = 1e-6):
        self.features = features
        gram = features.T @ features + ridge * np.eye(features.shape[1])
        try:
            self.factor = cho_factor(gram)
        except LinAlgError as e:
            raise NumericalError(f"ridge system is not positive definite: {e}") from e

    def solve(self, targets: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, self.features.T @ targets)


def fit_v_critic(critic: LinearCritic, states: np.ndarray, targets: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    if critic.kind != "v":
        raise UsageError("fit_v_critic needs a V-critic")
    weights = RidgeSolver(critic.features(states), ridge).solve(np.asarray(targets, dtype=float))
    if not np.all(np.isfinite(weights)):
        raise NumericalError("V-critic least squares produced non-finite weights")
    return weights


def fit_q_critic_batch(
    critic: LinearCritic,
    batch: TransitionBatch,
    next_actions: np.ndarray,
    gamma: float,
    ridge: float = 1e-6,
    tol: float = 1e-8,
    max_sweeps: int = 100,
    solver: QSolver = "iterated",
) -> Tuple[np.ndarray, int]:
    """Returns (weights, sweeps). Sweeps start from the critic's current weights."""
    if critic.kind != "q":
        raise UsageError("fit_q_critic_batch needs a Q-critic")
    features = critic.features(batch.states, batch.actions)
    next_features = np.where(
        batch.terminals[:, None], 0.0, critic.features(batch.next_states, next_actions)
    )

    if solver == "lstd":
        system = features.T @ (features - gamma * next_features) + ridge * np.eye(features.shape[1])
        weights = lstsq(system, features.T @ batch.rewards)[0]
        return weights, 1
    if solver != "iterated":
        raise ConfigurationError(f"unknown Q-critic solver '{solver}'")

    ridge_solver = RidgeSolver(features, ridge)
    weights = critic.weights.copy()
    for sweep in range(1, max_sweeps + 1):
        updated = ridge_solver.solve(batch.rewards + gamma * next_features @ weights)
        if not np.all(np.isfinite(updated)):
            raise NumericalError("Q-critic sweeps diverged")
        change = np.max(np.abs(updated - weights))
        weights = updated
        if change < tol:
            break
    logger.debug("q_critic_fitted", sweeps=sweep, change=float(change))
    return weights, sweep


def q_semi_gradient(critic: LinearCritic, batch: TransitionBatch, td_errors: np.ndarray) -> np.ndarray:
    """grad_w of 1/2 mean(delta^2) with the bootstrap held fixed: -mean(delta phi(s, a))"""
    features = critic.features(batch.states, batch.actions)
    return -(td_errors @ features) / len(td_errors)


def q_critic_adam_step(
    critic: LinearCritic, state: AdamState, batch: TransitionBatch, td_errors: np.ndarray
) -> AdamState:
    critic.weights, state = adam_step(state, critic.weights, q_semi_gradient(critic, batch, td_errors))
    return state


def fit_critic(
    critic: LinearCritic,
    data: Union[Sequence[Trajectory], TransitionBatch],
    config: EstimatorConfig,
    next_actions: Optional[np.ndarray] = None,
    ridge: float = 1e-6,
    target_critic: Optional[LinearCritic] = None,
    target_policy: Optional[GaussianPolicy] = None,
    **q_options,
) -> np.ndarray:
    """New weights for ``critic``.

    V-critics regress onto lambda-returns computed with ``target_critic``
    (the critic itself by default). With ``target_policy`` the traces are
    importance weighted against the stored behavior log-probs, truncated
    when ``config.use_retrace``. Q-critics run the batch sweeps and need
    the bootstrap actions.
    """
    if critic.kind == "v":
        source = critic if target_critic is None else target_critic
        states, targets = [], []
        for trajectory in data:
            batch = trajectory.as_batch()
            states.append(batch.states)
            if target_policy is None:
                estimate = gae_lambda(source, trajectory, config)
            else:
                estimate = retrace_advantage(
                    source,
                    trajectory,
                    config,
                    behavior_log_probs=batch.log_probs,
                    target_log_probs=target_policy.log_probs(batch.states, batch.actions),
                    truncate=config.use_retrace,
                )
            targets.append(estimate.lambda_returns)
        return fit_v_critic(critic, np.vstack(states), np.concatenate(targets), ridge)

    if next_actions is None:
        raise UsageError("Q-critic fitting needs bootstrap actions")
    weights, _ = fit_q_critic_batch(critic, data, next_actions, config.gamma, ridge=ridge, **q_options)
    return weights
