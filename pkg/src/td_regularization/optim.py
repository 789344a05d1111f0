#!/usr/bin/env python3
"""
⚙️ Optimizers shared by the learners: ADAM, conjugate gradient on the
damped Fisher operator, and the KL-constrained backtracking line search.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
import structlog
from scipy.sparse.linalg import LinearOperator, cg

from src.td_regularization.errors import ConfigurationError, NumericalError

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, size: int, alpha: float, **kwargs) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), alpha=alpha, **kwargs)


def adam_step(
    state: AdamState, params: np.ndarray, gradient: np.ndarray, maximize: bool = False
) -> Tuple[np.ndarray, AdamState]:
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != state.m.shape or np.shape(params) != state.m.shape:
        raise ConfigurationError(f"ADAM state has size {state.m.size}, got {np.shape(params)}")
    if not np.all(np.isfinite(gradient)):
        raise NumericalError("non-finite gradient passed to ADAM")

    g = -gradient if maximize else gradient
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = np.asarray(params, dtype=float) - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


class FisherOperator:
    """v -> F v + damping * v"""

    def __init__(self, product: Callable[[np.ndarray], np.ndarray], size: int, damping: float = 0.1):
        if damping < 0.0:
            raise ConfigurationError(f"damping must be non-negative, got {damping}")
        self.product = product
        self.size = size
        self.damping = damping

    def __call__(self, vector: np.ndarray) -> np.ndarray:
        return self.product(vector) + self.damping * vector

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.size, self.size), matvec=self, dtype=float)


def conjugate_gradient_solve(
    op: FisherOperator,
    rhs: np.ndarray,
    max_iters: int = 10,
    tol: float = 1e-10,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> np.ndarray:
    """Approximate (F + damping I)^-1 rhs with at most ``max_iters`` CG iterations"""
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise NumericalError("non-finite right-hand side for conjugate gradient")
    if not np.any(rhs):
        return np.zeros_like(rhs)
    solution, info = cg(
        op.as_linear_operator(),
        rhs,
        x0=np.zeros_like(rhs),
        rtol=tol,
        atol=0.0,
        maxiter=max_iters,
        callback=callback,
    )
    if info < 0 or not np.all(np.isfinite(solution)):
        raise NumericalError(f"conjugate gradient broke down (info={info})")
    return solution


@dataclass
class LineSearchResult:
    params: np.ndarray
    accepted: bool
    step_fraction: float
    improvement: float
    kl: float
    backtracks: int


def backtracking_line_search(
    evaluate: Callable[[np.ndarray], Tuple[float, float]],
    theta: np.ndarray,
    full_step: np.ndarray,
    max_kl: float,
    max_backtracks: int = 10,
    backtrack_ratio: float = 0.5,
) -> LineSearchResult:
    """Largest theta + full_step * ratio^k that improves the objective with KL <= max_kl.

    ``evaluate(theta)`` returns (objective, mean KL to the current policy).
    Without an acceptable step the parameters are returned unchanged.
    """
    full_step = np.asarray(full_step, dtype=float)
    if not np.all(np.isfinite(full_step)):
        raise NumericalError("line search received a non-finite step")
    base_objective, _ = evaluate(theta)

    fraction = 1.0
    for k in range(max_backtracks + 1):
        candidate = theta + fraction * full_step
        objective, kl = evaluate(candidate)
        improvement = objective - base_objective
        if np.isfinite(objective) and improvement > 0.0 and kl <= max_kl:
            logger.debug("line_search_accepted", backtracks=k, kl=kl, improvement=improvement)
            return LineSearchResult(candidate, True, fraction, improvement, kl, k)
        fraction *= backtrack_ratio

    logger.warning("line_search_rejected", backtracks=max_backtracks)
    return LineSearchResult(np.array(theta, dtype=float, copy=True), False, 0.0, 0.0, 0.0, max_backtracks)
