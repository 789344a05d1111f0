#!/usr/bin/env python3
"""
🧩 Feature maps shared by actors and critics

- IdentityBasis: the raw state, for linear LQR gains a = K s
- PolynomialBasis: every monomial of total degree <= d in graded-lex order
- FourierBasis: sin(W s + phase) with rows of W scaled by a data-driven bandwidth

Every map exposes ``output_dim``, ``transform`` (rows of inputs),
``__call__`` (one input) and ``jacobian`` (d features / d input).
"""

from pathlib import Path
from typing import Protocol, Sequence, Union

import numpy as np
import structlog
from scipy.spatial.distance import pdist
from sklearn.preprocessing import PolynomialFeatures

from src.td_regularization.errors import ConfigurationError, DataError

logger = structlog.get_logger(__name__)

BASIS_FORMAT_VERSION = 1
MAX_EXACT_PAIRS = 2_000_000
SAMPLED_PAIRS = 1_000_000


class FeatureMap(Protocol):
    input_dim: int
    output_dim: int

    def transform(self, inputs: np.ndarray) -> np.ndarray:
        ...

    def __call__(self, x: np.ndarray) -> np.ndarray:
        ...

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        ...


def _as_rows(inputs: np.ndarray, input_dim: int) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(inputs, dtype=float))
    if rows.shape[1] != input_dim:
        raise ConfigurationError(f"feature input has dimension {rows.shape[1]}, expected {input_dim}")
    return rows


class IdentityBasis:
    def __init__(self, input_dim: int):
        self.input_dim = input_dim
        self.output_dim = input_dim

    def transform(self, inputs: np.ndarray) -> np.ndarray:
        return _as_rows(inputs, self.input_dim).copy()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.transform(x)[0]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return np.eye(self.input_dim)


class PolynomialBasis:
    """Full polynomial basis over the input, constant monomial first"""

    def __init__(self, input_dim: int, degree: int):
        if input_dim < 1 or degree < 0:
            raise ConfigurationError(f"invalid polynomial basis ({input_dim}, {degree})")
        self.input_dim = input_dim
        self.degree = degree
        self.expander = PolynomialFeatures(degree=degree, include_bias=True)
        self.expander.fit(np.zeros((1, input_dim)))
        self.powers = self.expander.powers_
        self.output_dim = self.powers.shape[0]

    def transform(self, inputs: np.ndarray) -> np.ndarray:
        return self.expander.transform(_as_rows(inputs, self.input_dim))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.transform(x)[0]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """(output_dim, input_dim) matrix of partial derivatives at one point"""
        x = _as_rows(x, self.input_dim)[0]
        jac = np.zeros((self.output_dim, self.input_dim))
        for j in range(self.input_dim):
            exponents = self.powers[:, j]
            active = exponents > 0
            reduced = self.powers[active].copy()
            reduced[:, j] -= 1
            jac[active, j] = exponents[active] * np.prod(x ** reduced, axis=1)
        return jac


def polynomial_features(basis: PolynomialBasis, s: np.ndarray, a: Union[np.ndarray, None] = None) -> np.ndarray:
    """Features of the concatenated (s, a), or of s alone for V-critics"""
    x = np.asarray(s, dtype=float) if a is None else np.concatenate([np.ravel(s), np.ravel(a)])
    return basis(x)


class FourierBasis:
    def __init__(self, projection: np.ndarray, phases: np.ndarray, bandwidth: float):
        self.projection = np.asarray(projection, dtype=float)
        self.phases = np.asarray(phases, dtype=float)
        self.bandwidth = float(bandwidth)
        self.projection.setflags(write=False)
        self.phases.setflags(write=False)
        self.output_dim, self.input_dim = self.projection.shape

    @property
    def count(self) -> int:
        return self.output_dim

    def transform(self, inputs: np.ndarray) -> np.ndarray:
        return np.sin(_as_rows(inputs, self.input_dim) @ self.projection.T + self.phases)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.transform(x)[0]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = _as_rows(x, self.input_dim)[0]
        return np.cos(self.projection @ x + self.phases)[:, None] * self.projection

    def save(self, path: Union[str, Path]) -> None:
        np.savez(
            path,
            version=BASIS_FORMAT_VERSION,
            count=self.count,
            bandwidth=self.bandwidth,
            projection=self.projection,
            phases=self.phases,
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FourierBasis":
        with np.load(path) as record:
            if int(record["version"]) != BASIS_FORMAT_VERSION:
                raise DataError(f"unsupported basis format version {int(record['version'])}")
            return cls(record["projection"], record["phases"], float(record["bandwidth"]))


def mean_pairwise_distance(states: np.ndarray, rng: np.random.Generator) -> float:
    """Average Euclidean distance over all pairs, or over 10^6 random pairs for large samples"""
    n = states.shape[0]
    if n * (n - 1) // 2 <= MAX_EXACT_PAIRS:
        return float(np.mean(pdist(states)))
    first = rng.integers(0, n, size=SAMPLED_PAIRS)
    offset = rng.integers(1, n, size=SAMPLED_PAIRS)
    second = (first + offset) % n
    return float(np.mean(np.linalg.norm(states[first] - states[second], axis=1)))


def make_fourier_basis(count: int, sample_states: Sequence[np.ndarray], rng: np.random.Generator) -> FourierBasis:
    states = np.atleast_2d(np.asarray(sample_states, dtype=float))
    if states.shape[0] < 2:
        raise DataError("bandwidth calibration needs at least two states")
    bandwidth = mean_pairwise_distance(states, rng)
    if not bandwidth > 0.0:
        raise DataError("calibration states are all identical; bandwidth is zero")

    projection = rng.standard_normal((count, states.shape[1])) / bandwidth
    phases = rng.uniform(-np.pi, np.pi, size=count)
    logger.debug("fourier_basis_built", count=count, bandwidth=bandwidth, samples=states.shape[0])
    return FourierBasis(projection, phases, bandwidth)


def fourier_features(basis: FourierBasis, s: np.ndarray) -> np.ndarray:
    return basis(s)
