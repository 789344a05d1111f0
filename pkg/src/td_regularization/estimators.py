#!/usr/bin/env python3
"""
🧮 Temporal-difference and advantage estimators

One-step TD errors for Q- and V-critics, GAE / lambda-returns, the Retrace
advantage with (optionally truncated) importance weights, and the
standardization applied before every trust-region update.

The end of a trajectory is treated as termination: V(s_{T+1}) = 0, so the
lambda-return keeps its pure Monte Carlo tail.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import structlog

from src.td_regularization.critics import LinearCritic
from src.td_regularization.env_core import Trajectory, Transition, TransitionBatch
from src.td_regularization.errors import ConfigurationError, DataError, InsufficientDataError, UsageError

logger = structlog.get_logger(__name__)

STANDARDIZE_EPS = 1e-8

NextActionSource = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class EstimatorConfig:
    gamma: float = 0.99
    lam: float = 0.95
    use_retrace: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass
class AdvantageBatch:
    advantages: np.ndarray
    lambda_returns: np.ndarray
    td_errors: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.advantages)


def _next_actions(source: NextActionSource, next_states: np.ndarray) -> np.ndarray:
    return source(next_states) if callable(source) else np.atleast_2d(source)


def td_errors_q(
    critic: LinearCritic,
    batch: TransitionBatch,
    next_action_source: NextActionSource,
    gamma: float,
    bootstrap_values: Optional[np.ndarray] = None,
) -> np.ndarray:
    """r + gamma Q_target(s', a+) - Q(s, a) over a batch; terminal rows drop the bootstrap.

    ``bootstrap_values`` replaces Q_target(s', a+) when the caller already has
    it (twin-min targets).
    """
    if critic.kind != "q":
        raise UsageError("td_errors_q needs a Q-critic")
    if bootstrap_values is None:
        next_actions = _next_actions(next_action_source, batch.next_states)
        bootstrap_values = critic.target_values(batch.next_states, next_actions)
    bootstrap = np.where(batch.terminals, 0.0, bootstrap_values)
    return batch.rewards + gamma * bootstrap - critic.values(batch.states, batch.actions)


def td_error_q(
    critic: LinearCritic, transition: Transition, next_action_source: NextActionSource, gamma: float
) -> float:
    batch = TransitionBatch.from_transitions([transition])
    return float(td_errors_q(critic, batch, next_action_source, gamma)[0])


def td_errors_v(critic: LinearCritic, batch: TransitionBatch, gamma: float, final_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """r + gamma V(s') - V(s); rows flagged terminal or in ``final_mask`` bootstrap with 0"""
    if critic.kind != "v":
        raise UsageError("td_errors_v needs a V-critic")
    stop = batch.terminals if final_mask is None else (batch.terminals | final_mask)
    next_values = np.where(stop, 0.0, critic.values(batch.next_states))
    return batch.rewards + gamma * next_values - critic.values(batch.states)


def td_error_v(critic: LinearCritic, transition: Transition, gamma: float, final: bool = False) -> float:
    batch = TransitionBatch.from_transitions([transition])
    return float(td_errors_v(critic, batch, gamma, final_mask=np.array([final]))[0])


def _trajectory_td_errors(critic: LinearCritic, trajectory: Trajectory, gamma: float):
    if len(trajectory) == 0:
        raise InsufficientDataError("cannot estimate advantages on an empty trajectory")
    batch = trajectory.as_batch()
    final = np.zeros(len(batch), dtype=bool)
    final[-1] = True
    values = critic.values(batch.states)
    return td_errors_v(critic, batch, gamma, final_mask=final), values


def _backward_recursion(td_errors: np.ndarray, decay: float, trace_weights: np.ndarray) -> np.ndarray:
    """A_t = delta_t + decay * c_{t+1} * A_{t+1}, A_{T+1} = 0"""
    advantages = np.zeros_like(td_errors)
    running = 0.0
    for t in range(len(td_errors) - 1, -1, -1):
        next_weight = trace_weights[t + 1] if t + 1 < len(td_errors) else 0.0
        running = td_errors[t] + decay * next_weight * running
        advantages[t] = running
    return advantages


def gae_lambda(critic: LinearCritic, trajectory: Trajectory, config: EstimatorConfig) -> AdvantageBatch:
    td_errors, values = _trajectory_td_errors(critic, trajectory, config.gamma)
    ones = np.ones_like(td_errors)
    advantages = _backward_recursion(td_errors, config.gamma * config.lam, ones)
    return AdvantageBatch(
        advantages=advantages,
        lambda_returns=advantages + values,
        td_errors=td_errors,
        weights=ones,
    )


def importance_weights(
    target_log_probs: np.ndarray, behavior_log_probs: np.ndarray, truncate: bool = True
) -> np.ndarray:
    """pi / beta per step, capped at 1 when ``truncate``"""
    log_ratio = np.asarray(target_log_probs, dtype=float) - np.asarray(behavior_log_probs, dtype=float)
    if np.any(np.isnan(log_ratio)) or np.any(log_ratio == np.inf):
        raise DataError("importance ratio is not finite (zero behavior density)")
    if truncate:
        return np.exp(np.minimum(log_ratio, 0.0))
    with np.errstate(over="ignore"):
        ratios = np.exp(log_ratio)
    if not np.all(np.isfinite(ratios)):
        raise DataError("untruncated importance ratio overflowed")
    return ratios


def retrace_advantage(
    critic: LinearCritic,
    trajectory: Trajectory,
    config: EstimatorConfig,
    behavior_log_probs: np.ndarray,
    target_log_probs: np.ndarray,
    truncate: bool = True,
) -> AdvantageBatch:
    """Lambda-advantage whose traces are cut by w_j = min(1, pi(a_j|s_j) / beta(a_j|s_j)).

    The action of the first step is given, so w_t enters only the terms
    that reach past step t.
    """
    td_errors, values = _trajectory_td_errors(critic, trajectory, config.gamma)
    weights = importance_weights(target_log_probs, behavior_log_probs, truncate=truncate)
    if weights.shape != td_errors.shape:
        raise DataError("one behavior log-probability per transition is required")
    advantages = _backward_recursion(td_errors, config.gamma * config.lam, weights)
    return AdvantageBatch(
        advantages=advantages,
        lambda_returns=advantages + values,
        td_errors=td_errors,
        weights=weights,
    )


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Monte Carlo return-to-go sum_{i >= t} gamma^(i-t) r_i"""
    returns = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def standardize(values: np.ndarray) -> np.ndarray:
    """(y - mean) / population std, or zeros when the std is below 1e-8"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InsufficientDataError("cannot standardize an empty array")
    std = values.std()
    if std < STANDARDIZE_EPS:
        return np.zeros_like(values)
    return (values - values.mean()) / std
