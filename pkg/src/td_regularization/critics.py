#!/usr/bin/env python3
"""
📏 Linear critics: Q(s,a) = phi(s,a)'w or V(s) = phi(s)'w, with an optional
target copy, plus the twin pair used by the delayed twin-critic learner.
"""

from typing import Literal, Optional

import numpy as np
import structlog

from src.td_regularization.errors import ConfigurationError, UsageError
from src.td_regularization.features import FeatureMap

logger = structlog.get_logger(__name__)

CriticKind = Literal["q", "v"]


def soft_update(target: np.ndarray, source: np.ndarray, tau: float) -> np.ndarray:
    """target' = tau * source + (1 - tau) * target"""
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1], got {tau}")
    if tau == 1.0:
        return np.array(source, dtype=float, copy=True)
    return tau * np.asarray(source, dtype=float) + (1.0 - tau) * np.asarray(target, dtype=float)


class LinearCritic:
    def __init__(
        self,
        basis: FeatureMap,
        kind: CriticKind,
        weights: np.ndarray,
        state_dim: int,
        target_weights: Optional[np.ndarray] = None,
    ):
        if kind not in ("q", "v"):
            raise ConfigurationError(f"unknown critic kind '{kind}'")
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (basis.output_dim,):
            raise ConfigurationError(f"critic expects {basis.output_dim} weights, got {weights.shape}")
        self.basis = basis
        self.kind = kind
        self.state_dim = state_dim
        self.weights = weights.copy()
        self.target_weights = None if target_weights is None else np.asarray(target_weights, dtype=float).copy()

    @classmethod
    def create(
        cls,
        basis: FeatureMap,
        kind: CriticKind,
        state_dim: int,
        rng: np.random.Generator,
        with_target: bool = False,
    ) -> "LinearCritic":
        """Weights drawn from U[-1, 1]; the target starts as an exact copy"""
        weights = rng.uniform(-1.0, 1.0, size=basis.output_dim)
        return cls(basis, kind, weights, state_dim, target_weights=weights if with_target else None)

    def copy(self) -> "LinearCritic":
        return LinearCritic(self.basis, self.kind, self.weights, self.state_dim, self.target_weights)

    def features(self, states: np.ndarray, actions: Optional[np.ndarray] = None) -> np.ndarray:
        states = np.atleast_2d(states)
        if self.kind == "q":
            if actions is None:
                raise UsageError("a Q-critic needs actions")
            return self.basis.transform(np.hstack([states, np.atleast_2d(actions)]))
        if actions is not None:
            raise UsageError("a V-critic does not take actions")
        return self.basis.transform(states)

    def values(
        self,
        states: np.ndarray,
        actions: Optional[np.ndarray] = None,
        weights: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        w = self.weights if weights is None else weights
        return self.features(states, actions) @ w

    def target_values(self, states: np.ndarray, actions: Optional[np.ndarray] = None) -> np.ndarray:
        """Bootstrap values; the online weights stand in when no target copy exists"""
        w = self.weights if self.target_weights is None else self.target_weights
        return self.values(states, actions, weights=w)

    def action_gradients(
        self, states: np.ndarray, actions: np.ndarray, weights: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Per-sample grad_a Q(s, a), shape (n, action_dim)"""
        if self.kind != "q":
            raise UsageError("action gradients need a Q-critic")
        w = self.weights if weights is None else weights
        inputs = np.hstack([np.atleast_2d(states), np.atleast_2d(actions)])
        return np.stack([(w @ self.basis.jacobian(x))[self.state_dim :] for x in inputs])

    def update_target(self, tau: float) -> None:
        if self.target_weights is not None:
            self.target_weights = soft_update(self.target_weights, self.weights, tau)


class TwinCritic:
    """Two Q-critics sharing one feature map with independent weights"""

    def __init__(self, first: LinearCritic, second: LinearCritic):
        if first.basis is not second.basis or first.kind != "q" or second.kind != "q":
            raise ConfigurationError("twin critics must be Q-critics over the same feature map")
        self.first = first
        self.second = second

    def __iter__(self):
        return iter((self.first, self.second))

    def min_target_values(self, states: np.ndarray, actions: np.ndarray):
        """(elementwise min of the two target critics, index of the minimizing critic)"""
        stacked = np.stack([self.first.target_values(states, actions), self.second.target_values(states, actions)])
        chosen = np.argmin(stacked, axis=0)
        return stacked[chosen, np.arange(stacked.shape[1])], chosen

    def update_targets(self, tau: float) -> None:
        self.first.update_target(tau)
        self.second.update_target(tau)


def critic_value(critic: LinearCritic, s: np.ndarray, a: Optional[np.ndarray] = None) -> float:
    if critic.kind == "q" and a is None:
        raise UsageError("a Q-critic needs an action")
    actions = None if a is None else np.atleast_2d(a)
    return float(critic.values(np.atleast_2d(s), actions)[0])
