#!/usr/bin/env python3
"""
🎭 Parametric policies

GaussianPolicy       pi(a|s) = N(b + K phi(s), Sigma), Sigma = L L' with a
                     scalar, diagonal or full lower-triangular factor L
DeterministicPolicy  a = b + K phi(s), plus decaying Gaussian exploration
UniformRandomPolicy  uniform actions, used to collect calibration states

theta is always the flat vector [vec(K) row-major, b (if any), factor params].
"""

from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import numpy as np
import structlog
from scipy.linalg import solve_triangular

from src.td_regularization.errors import ConfigurationError, DataError
from src.td_regularization.features import FeatureMap

logger = structlog.get_logger(__name__)

CovarianceKind = Literal["scalar", "diagonal", "full"]

FACTOR_FLOOR = 1e-8
CHECKPOINT_FORMAT_VERSION = 1
LOG_2PI = np.log(2.0 * np.pi)


def init_lqr_gain(dim: int, rng: np.random.Generator) -> np.ndarray:
    """K = -K0'K0 with K0 ~ U[-0.5, -0.1], negative semidefinite by construction"""
    k0 = rng.uniform(-0.5, -0.1, size=(dim, dim))
    return -k0.T @ k0


class LinearMeanPolicy:
    """Shared mean map b + K phi(s) over a flat parameter vector"""

    def __init__(self, basis: FeatureMap, action_dim: int, use_bias: bool, theta: np.ndarray):
        self.basis = basis
        self.action_dim = action_dim
        self.use_bias = use_bias
        self.n_gain = action_dim * basis.output_dim
        self.n_bias = action_dim if use_bias else 0
        self.theta = np.asarray(theta, dtype=float).copy()

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def gain(self) -> np.ndarray:
        return self.theta[: self.n_gain].reshape(self.action_dim, self.basis.output_dim)

    @property
    def bias(self) -> np.ndarray:
        if not self.use_bias:
            return np.zeros(self.action_dim)
        return self.theta[self.n_gain : self.n_gain + self.n_bias]

    def features(self, states: np.ndarray) -> np.ndarray:
        return self.basis.transform(states)

    def means(self, states: np.ndarray, features: Optional[np.ndarray] = None) -> np.ndarray:
        phi = self.features(states) if features is None else features
        return phi @ self.gain.T + self.bias

    def mean(self, s: np.ndarray) -> np.ndarray:
        return self.means(np.atleast_2d(s))[0]

    def mean_vjp(self, states: np.ndarray, action_grads: np.ndarray) -> np.ndarray:
        """Per-sample d(g_n' mu(s_n))/d theta over the mean block, shape (n, n_gain + n_bias)"""
        phi = self.features(states)
        grads = np.atleast_2d(action_grads)
        gain_part = np.einsum("ni,nj->nij", grads, phi).reshape(len(phi), -1)
        if not self.use_bias:
            return gain_part
        return np.hstack([gain_part, grads])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))


class GaussianPolicy(LinearMeanPolicy):
    def __init__(
        self,
        basis: FeatureMap,
        action_dim: int,
        covariance: CovarianceKind,
        theta: np.ndarray,
        use_bias: bool = True,
    ):
        super().__init__(basis, action_dim, use_bias, theta)
        if covariance not in ("scalar", "diagonal", "full"):
            raise ConfigurationError(f"unknown covariance parameterization '{covariance}'")
        self.covariance = covariance
        self.n_cov = {
            "scalar": 1,
            "diagonal": action_dim,
            "full": action_dim * (action_dim + 1) // 2,
        }[covariance]
        expected = self.n_gain + self.n_bias + self.n_cov
        if self.theta.size != expected:
            raise ConfigurationError(f"Gaussian policy expects {expected} parameters, got {self.theta.size}")
        self.tril_rows, self.tril_cols = np.tril_indices(action_dim)

    @classmethod
    def create(
        cls,
        basis: FeatureMap,
        action_dim: int,
        covariance: CovarianceKind,
        init_variance: float,
        use_bias: bool = True,
        gain: Optional[np.ndarray] = None,
        bias: Optional[np.ndarray] = None,
    ) -> "GaussianPolicy":
        """Gain and bias default to zero; the covariance starts at init_variance * I"""
        gain = np.zeros((action_dim, basis.output_dim)) if gain is None else np.asarray(gain, dtype=float)
        parts = [gain.ravel()]
        if use_bias:
            parts.append(np.zeros(action_dim) if bias is None else np.asarray(bias, dtype=float))
        init_std = np.sqrt(init_variance)
        if covariance == "scalar":
            parts.append(np.array([init_std]))
        elif covariance == "diagonal":
            parts.append(np.full(action_dim, init_std))
        else:
            parts.append((init_std * np.eye(action_dim))[np.tril_indices(action_dim)])
        return cls(basis, action_dim, covariance, np.concatenate(parts), use_bias=use_bias)

    def with_params(self, theta: np.ndarray) -> "GaussianPolicy":
        return GaussianPolicy(self.basis, self.action_dim, self.covariance, theta, use_bias=self.use_bias)

    @property
    def cov_params(self) -> np.ndarray:
        return self.theta[self.n_gain + self.n_bias :]

    def _factor_mask(self) -> np.ndarray:
        """1 where a factor parameter is above the floor (gradient flows), else 0"""
        raw = self.cov_params
        if self.covariance == "full":
            on_diagonal = self.tril_rows == self.tril_cols
            return np.where(on_diagonal, (raw > FACTOR_FLOOR).astype(float), 1.0)
        return (raw > FACTOR_FLOOR).astype(float)

    def cholesky(self) -> np.ndarray:
        raw = self.cov_params
        d = self.action_dim
        if self.covariance == "scalar":
            return max(raw[0], FACTOR_FLOOR) * np.eye(d)
        if self.covariance == "diagonal":
            return np.diag(np.maximum(raw, FACTOR_FLOOR))
        factor = np.zeros((d, d))
        factor[self.tril_rows, self.tril_cols] = raw
        np.fill_diagonal(factor, np.maximum(np.diag(factor), FACTOR_FLOOR))
        return factor

    def covariance_matrix(self) -> np.ndarray:
        factor = self.cholesky()
        return factor @ factor.T

    def log_probs(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        factor = self.cholesky()
        residuals = np.atleast_2d(actions) - self.means(states)
        z = solve_triangular(factor, residuals.T, lower=True)
        return (
            -0.5 * np.sum(z ** 2, axis=0)
            - np.sum(np.log(np.diag(factor)))
            - 0.5 * self.action_dim * LOG_2PI
        )

    def act(self, s: np.ndarray, rng: np.random.Generator, explore: bool = True) -> Tuple[np.ndarray, float]:
        mean = self.mean(s)
        action = mean + self.cholesky() @ rng.standard_normal(self.action_dim) if explore else mean
        return action, float(self.log_probs(np.atleast_2d(s), action[None, :])[0])

    def sample_actions(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        means = self.means(states)
        noise = rng.standard_normal(means.shape) @ self.cholesky().T
        return means + noise

    def scores(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Per-sample grad_theta log pi(a|s), shape (n, n_params)"""
        factor = self.cholesky()
        residuals = np.atleast_2d(actions) - self.means(states)
        z = solve_triangular(factor, residuals.T, lower=True)
        precision_residuals = solve_triangular(factor, z, lower=True, trans="T").T
        mean_block = self.mean_vjp(states, precision_residuals)

        mask = self._factor_mask()
        if self.covariance == "scalar":
            sigma = factor[0, 0]
            squared_norm = np.sum(residuals ** 2, axis=1)
            cov_block = (squared_norm / sigma ** 3 - self.action_dim / sigma)[:, None]
        elif self.covariance == "diagonal":
            sigmas = np.diag(factor)
            cov_block = residuals ** 2 / sigmas ** 3 - 1.0 / sigmas
        else:
            outer = np.einsum("ni,jn->nij", precision_residuals, z)
            outer[:, np.arange(self.action_dim), np.arange(self.action_dim)] -= 1.0 / np.diag(factor)
            cov_block = outer[:, self.tril_rows, self.tril_cols]
        return np.hstack([mean_block, cov_block * mask])

    def _covariance_derivatives(self) -> np.ndarray:
        """d Sigma / d theta_i for every factor parameter, shape (n_cov, d, d)"""
        factor = self.cholesky()
        d = self.action_dim
        mask = self._factor_mask()
        derivatives = np.zeros((self.n_cov, d, d))
        if self.covariance == "scalar":
            derivatives[0] = 2.0 * factor[0, 0] * np.eye(d)
        elif self.covariance == "diagonal":
            for i in range(d):
                derivatives[i, i, i] = 2.0 * factor[i, i]
        else:
            for k, (row, col) in enumerate(zip(self.tril_rows, self.tril_cols)):
                unit = np.zeros((d, d))
                unit[row, col] = 1.0
                derivatives[k] = unit @ factor.T + factor @ unit.T
        return derivatives * mask[:, None, None]

    def covariance_fisher(self) -> np.ndarray:
        """F_ij = 1/2 tr(Sigma^-1 D_i Sigma^-1 D_j) over the factor parameters"""
        precision = np.linalg.inv(self.covariance_matrix())
        scaled = np.einsum("ab,kbc->kac", precision, self._covariance_derivatives())
        return 0.5 * np.einsum("iab,jba->ij", scaled, scaled)

    def fisher_vector_product(self, states: np.ndarray, vector: np.ndarray) -> np.ndarray:
        """Average Fisher information of the batch states applied to ``vector``"""
        phi = self.features(states)
        v_gain = vector[: self.n_gain].reshape(self.action_dim, -1)
        v_bias = vector[self.n_gain : self.n_gain + self.n_bias] if self.use_bias else 0.0
        v_cov = vector[self.n_gain + self.n_bias :]

        mean_directions = phi @ v_gain.T + v_bias
        precision = np.linalg.inv(self.covariance_matrix())
        weighted = mean_directions @ precision
        parts = [(weighted.T @ phi / len(phi)).ravel()]
        if self.use_bias:
            parts.append(weighted.mean(axis=0))
        parts.append(self.covariance_fisher() @ v_cov)
        return np.concatenate(parts)

    def mean_kl(self, old: "GaussianPolicy", states: np.ndarray) -> float:
        """Average over states of KL(self || old)"""
        old_cov = old.covariance_matrix()
        new_cov = self.covariance_matrix()
        old_precision = np.linalg.inv(old_cov)
        delta = old.means(states) - self.means(states)
        _, logdet_old = np.linalg.slogdet(old_cov)
        _, logdet_new = np.linalg.slogdet(new_cov)
        trace_term = float(np.trace(old_precision @ new_cov))
        mahalanobis = np.einsum("ni,ij,nj->n", delta, old_precision, delta)
        return float(0.5 * np.mean(trace_term + mahalanobis - self.action_dim + logdet_old - logdet_new))


class DeterministicPolicy(LinearMeanPolicy):
    def __init__(
        self,
        basis: FeatureMap,
        action_dim: int,
        theta: np.ndarray,
        use_bias: bool = False,
        exploration_std: float = 5.0,
        exploration_decay: float = 0.95,
    ):
        super().__init__(basis, action_dim, use_bias, theta)
        if self.theta.size != self.n_gain + self.n_bias:
            raise ConfigurationError(
                f"deterministic policy expects {self.n_gain + self.n_bias} parameters, got {self.theta.size}"
            )
        self.exploration_std = exploration_std
        self.exploration_decay = exploration_decay

    @classmethod
    def from_gain(cls, basis: FeatureMap, gain: np.ndarray, **kwargs) -> "DeterministicPolicy":
        gain = np.asarray(gain, dtype=float)
        return cls(basis, gain.shape[0], gain.ravel(), **kwargs)

    def with_params(self, theta: np.ndarray) -> "DeterministicPolicy":
        return DeterministicPolicy(
            self.basis,
            self.action_dim,
            theta,
            use_bias=self.use_bias,
            exploration_std=self.exploration_std,
            exploration_decay=self.exploration_decay,
        )

    def act(self, s: np.ndarray, rng: np.random.Generator, explore: bool = True) -> Tuple[np.ndarray, None]:
        action = self.mean(s)
        if explore and self.exploration_std > 0.0:
            action = action + rng.normal(0.0, self.exploration_std, size=self.action_dim)
        return action, None

    def decay_exploration(self) -> float:
        self.exploration_std *= self.exploration_decay
        return self.exploration_std


class UniformRandomPolicy:
    def __init__(self, action_dim: int, low: float, high: float):
        self.action_dim = action_dim
        self.low = low
        self.high = high

    def act(self, s: np.ndarray, rng: np.random.Generator, explore: bool = True) -> Tuple[np.ndarray, float]:
        action = rng.uniform(self.low, self.high, size=self.action_dim)
        return action, -self.action_dim * float(np.log(self.high - self.low))


def policy_act(policy, s: np.ndarray, rng: np.random.Generator, explore: bool = True):
    return policy.act(s, rng, explore=explore)


def gaussian_score(policy: GaussianPolicy, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return policy.scores(np.atleast_2d(s), np.atleast_2d(a))[0]


def save_checkpoint(path: Union[str, Path], params: np.ndarray, kind: str, basis_name: str) -> None:
    np.savez(
        path,
        version=CHECKPOINT_FORMAT_VERSION,
        kind=kind,
        basis=basis_name,
        params=np.asarray(params, dtype=float),
    )


def load_checkpoint(path: Union[str, Path]) -> Tuple[np.ndarray, str, str]:
    with np.load(path) as record:
        if int(record["version"]) != CHECKPOINT_FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {int(record['version'])}")
        return record["params"].copy(), str(record["kind"]), str(record["basis"])
