#!/usr/bin/env python3
"""
Shared fixtures: seeded generators, small random batches, a finite-difference
gradient oracle and a tiny experiment config.
"""

from typing import Callable

import numpy as np
import pytest

from src.td_regularization.config import ExperimentConfig, parse_config
from src.td_regularization.critics import LinearCritic
from src.td_regularization.env_core import TransitionBatch
from src.td_regularization.env_lqr import LqrSpec
from src.td_regularization.features import IdentityBasis, PolynomialBasis
from src.td_regularization.policies import GaussianPolicy


@pytest.fixture
def rng(request) -> np.random.Generator:
    """Seeded generator; parametrize it indirectly with an integer seed to draw other instances"""
    return np.random.default_rng(getattr(request, "param", 20240611))


@pytest.fixture
def lqr_spec() -> LqrSpec:
    return LqrSpec()


@pytest.fixture
def finite_difference() -> Callable:
    def gradient(objective: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        grad = np.zeros_like(theta)
        for i in range(theta.size):
            step = np.zeros_like(theta)
            step[i] = eps
            grad[i] = (objective(theta + step) - objective(theta - step)) / (2.0 * eps)
        return grad

    return gradient


@pytest.fixture
def relative_error() -> Callable:
    def error(estimate: np.ndarray, reference: np.ndarray) -> float:
        return float(np.linalg.norm(estimate - reference) / max(np.linalg.norm(reference), 1e-8))

    return error


@pytest.fixture
def make_batch() -> Callable:
    """Random batch; actions from ``policy`` when given, terminals with probability ``terminal_rate``"""

    def build(
        rng: np.random.Generator,
        n: int = 40,
        state_dim: int = 2,
        action_dim: int = 2,
        policy=None,
        terminal_rate: float = 0.0,
    ) -> TransitionBatch:
        states = rng.uniform(-2.0, 2.0, size=(n, state_dim))
        if policy is not None:
            actions = policy.sample_actions(states, rng)
            log_probs = policy.log_probs(states, actions)
        else:
            actions = rng.normal(size=(n, action_dim))
            log_probs = np.zeros(n)
        return TransitionBatch(
            states=states,
            actions=actions,
            rewards=rng.normal(size=n),
            next_states=rng.uniform(-2.0, 2.0, size=(n, state_dim)),
            log_probs=log_probs,
            step_indices=np.arange(1, n + 1),
            terminals=rng.random(n) < terminal_rate,
        )

    return build


@pytest.fixture
def gaussian_policy(rng) -> GaussianPolicy:
    """2-d linear Gaussian policy with a random gain and diagonal std in [0.5, 1.5]"""
    basis = IdentityBasis(2)
    theta = np.concatenate([rng.normal(scale=0.5, size=4), rng.uniform(0.5, 1.5, size=2)])
    return GaussianPolicy(basis, 2, "diagonal", theta, use_bias=False)


@pytest.fixture
def q_critic(rng) -> LinearCritic:
    basis = PolynomialBasis(4, 2)
    return LinearCritic(basis, "q", rng.uniform(-1.0, 1.0, size=basis.output_dim), state_dim=2)


@pytest.fixture
def tiny_config() -> Callable[..., ExperimentConfig]:
    """Small LQR experiment; keyword arguments are 'section__key' overrides"""

    def build(**overrides) -> ExperimentConfig:
        data = {
            "env": {"id": "lqr"},
            "features": {"kind": "polynomial", "degree": 2},
            "algo": {"name": "spg", "episode_steps": 30},
            "penalty": {"eta0": 0.1, "kappa": 0.999},
            "eval": {"every": 2, "episodes": 2, "max_steps": 30},
            "run": {"name": "tiny", "trials": 2, "budget": 4, "workers": 1},
        }
        for key, value in overrides.items():
            section, field = key.split("__")
            data.setdefault(section, {})[field] = value
        return parse_config(data)

    return build
