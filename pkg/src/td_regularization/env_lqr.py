#!/usr/bin/env python3
"""
📐 Linear-quadratic regulator with closed-form oracles

Dynamics s' = A s + B a + N(0, noise_std^2 I), reward r = -s'Xs - a'Ya.
For a linear policy a = K s the value is quadratic, V(s) = s'Ps + c, where P
is the fixed point of the discounted Lyapunov recursion

    P = -(X + K'YK) + gamma (A+BK)' P (A+BK)

and c = gamma tr(P Sigma) / (1 - gamma) collects the transition-noise
variance. The on-policy Q-function follows by one Bellman backup and has no
linear terms.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.linalg
import structlog

from src.td_regularization.env_core import EnvironmentContract
from src.td_regularization.errors import ConfigurationError, DivergenceError, NumericalError
from src.td_regularization.oracle_cache import OracleCache

logger = structlog.get_logger(__name__)

oracle_cache = OracleCache(max_size=4096)


def _identity() -> np.ndarray:
    return np.eye(2)


@dataclass(frozen=True)
class LqrSpec:
    A: np.ndarray = field(default_factory=_identity)
    B: np.ndarray = field(default_factory=_identity)
    X: np.ndarray = field(default_factory=_identity)
    Y: np.ndarray = field(default_factory=_identity)
    noise_std: float = 0.1
    gamma: float = 0.99
    horizon: int = 150
    init_low: float = -10.0
    init_high: float = 10.0

    def __post_init__(self):
        d = self.A.shape[0]
        for name in ("A", "B", "X", "Y"):
            if getattr(self, name).shape != (d, d):
                raise ConfigurationError(f"LQR matrix {name} must be {d}x{d}")
        if not np.allclose(self.X, self.X.T) or np.linalg.eigvalsh(self.X).min() < -1e-12:
            raise ConfigurationError("X must be symmetric positive semidefinite")
        if not np.allclose(self.Y, self.Y.T) or np.linalg.eigvalsh(self.Y).min() <= 0:
            raise ConfigurationError("Y must be symmetric positive definite")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def cache_parts(self) -> tuple:
        return (self.A, self.B, self.X, self.Y, self.noise_std, self.gamma)


@dataclass(frozen=True)
class TrueQCoefficients:
    """Q(s,a) = q0 + s'Q_ss s + a'Q_aa a + s'Q_sa a"""
    q0: float
    q_ss: np.ndarray
    q_aa: np.ndarray
    q_sa: np.ndarray

    def value(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        actions = np.atleast_2d(actions)
        return (
            self.q0
            + np.einsum("ni,ij,nj->n", states, self.q_ss, states)
            + np.einsum("ni,ij,nj->n", actions, self.q_aa, actions)
            + np.einsum("ni,ij,nj->n", states, self.q_sa, actions)
        )


def lqr_step(
    spec: LqrSpec, s: np.ndarray, a: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, float]:
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if s.shape != (spec.dim,) or a.shape != (spec.dim,):
        raise ConfigurationError(f"LQR expects state and action of shape ({spec.dim},)")
    reward = -float(s @ spec.X @ s) - float(a @ spec.Y @ a)
    next_state = spec.A @ s + spec.B @ a
    if spec.noise_std > 0.0:
        next_state = next_state + rng.normal(0.0, spec.noise_std, size=spec.dim)
    return next_state, reward


def closed_loop(spec: LqrSpec, K: np.ndarray) -> np.ndarray:
    return spec.A + spec.B @ np.asarray(K, dtype=float)


def lqr_is_stable(spec: LqrSpec, K: np.ndarray) -> bool:
    """True iff every eigenvalue of A + BK lies strictly inside the unit circle"""
    K = np.asarray(K, dtype=float)
    if K.shape != (spec.dim, spec.dim):
        raise ConfigurationError(f"gain must be {spec.dim}x{spec.dim}, got {K.shape}")
    if not np.all(np.isfinite(K)):
        return False
    return bool(np.all(np.abs(np.linalg.eigvals(closed_loop(spec, K))) < 1.0))


def lqr_value_function(spec: LqrSpec, K: np.ndarray) -> Tuple[np.ndarray, float]:
    """(P, c) such that V(s) = s'Ps + c for the policy a = K s"""
    K = np.asarray(K, dtype=float)
    if not lqr_is_stable(spec, K):
        raise DivergenceError("A + BK is not stable; the value is -inf")

    def compute() -> Tuple[np.ndarray, float]:
        L = closed_loop(spec, K)
        stage = -(spec.X + K.T @ spec.Y @ K)
        P = scipy.linalg.solve_discrete_lyapunov(np.sqrt(spec.gamma) * L.T, stage)
        P = 0.5 * (P + P.T)
        noise_cov = spec.noise_std ** 2 * np.eye(spec.dim)
        c = spec.gamma * float(np.trace(P @ noise_cov)) / (1.0 - spec.gamma)
        return P, c

    return oracle_cache.get_or_compute(("value", *spec.cache_parts(), K), compute)


def lqr_true_q(spec: LqrSpec, K: np.ndarray) -> TrueQCoefficients:
    P, c = lqr_value_function(spec, K)
    gamma = spec.gamma
    # c = gamma (tr(P Sigma) + c), so the constant of the backup is c itself.
    return TrueQCoefficients(
        q0=c,
        q_ss=-spec.X + gamma * spec.A.T @ P @ spec.A,
        q_aa=-spec.Y + gamma * spec.B.T @ P @ spec.B,
        q_sa=2.0 * gamma * spec.A.T @ P @ spec.B,
    )


def initial_state_second_moment(spec: LqrSpec) -> np.ndarray:
    """E[s s'] for s ~ U[init_low, init_high]^d"""
    mean = 0.5 * (spec.init_low + spec.init_high)
    variance = (spec.init_high - spec.init_low) ** 2 / 12.0
    return variance * np.eye(spec.dim) + mean ** 2 * np.ones((spec.dim, spec.dim))


def lqr_true_return(spec: LqrSpec, K: np.ndarray) -> float:
    """E_{s_1 ~ mu_1}[V^K(s_1)], or -inf for an unstable gain"""
    try:
        P, c = lqr_value_function(spec, K)
    except DivergenceError:
        return float("-inf")
    return float(np.trace(P @ initial_state_second_moment(spec))) + c


def lqr_optimal_gain(spec: LqrSpec) -> np.ndarray:
    """Optimal gain of the discounted problem via the discrete algebraic Riccati equation"""
    root_gamma = np.sqrt(spec.gamma)
    try:
        P = scipy.linalg.solve_discrete_are(root_gamma * spec.A, root_gamma * spec.B, spec.X, spec.Y)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"Riccati equation did not converge: {e}") from e
    gain = -spec.gamma * np.linalg.solve(spec.Y + spec.gamma * spec.B.T @ P @ spec.B, spec.B.T @ P @ spec.A)
    if not lqr_is_stable(spec, gain):
        raise NumericalError("Riccati solution does not stabilize the system")
    return gain


class LqrEnv(EnvironmentContract):
    def __init__(self, spec: LqrSpec = None):
        self.spec = spec or LqrSpec()
        self.state_dim = self.spec.dim
        self.action_dim = self.spec.dim
        self.horizon = self.spec.horizon
        self.gamma = self.spec.gamma

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.spec.init_low, self.spec.init_high, size=self.spec.dim)

    def step(self, state, action, rng):
        return lqr_step(self.spec, state, action, rng)
