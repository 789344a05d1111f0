#!/usr/bin/env python3
"""
🧪 ADAM, conjugate gradient and the KL line search
"""

import numpy as np
import pytest

from src.td_regularization.errors import ConfigurationError, NumericalError
from src.td_regularization.optim import (
    AdamState,
    FisherOperator,
    adam_step,
    backtracking_line_search,
    conjugate_gradient_solve,
)


def spd_matrix(rng, n=6):
    m = rng.normal(size=(n, n))
    return m @ m.T + 0.5 * np.eye(n)


def test_first_adam_step_moves_alpha_against_the_gradient():
    state = AdamState.create(3, alpha=0.01)
    params, state = adam_step(state, np.zeros(3), np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(params, [-0.01, 0.01, 0.0], atol=1e-9)
    assert state.t == 1


def test_maximize_flips_the_direction():
    state = AdamState.create(2, alpha=0.1)
    params, _ = adam_step(state, np.zeros(2), np.array([1.0, -1.0]), maximize=True)
    np.testing.assert_allclose(params, [0.1, -0.1], atol=1e-8)


def test_adam_minimizes_a_quadratic(rng):
    target = rng.normal(size=4)
    params = np.zeros(4)
    state = AdamState.create(4, alpha=0.05)
    for _ in range(2000):
        params, state = adam_step(state, params, 2.0 * (params - target))
    np.testing.assert_allclose(params, target, atol=1e-3)


def test_adam_rejects_bad_gradients():
    state = AdamState.create(2, alpha=0.1)
    with pytest.raises(NumericalError):
        adam_step(state, np.zeros(2), np.array([np.nan, 0.0]))
    with pytest.raises(ConfigurationError):
        adam_step(state, np.zeros(3), np.zeros(3))


def test_cg_solves_small_systems_exactly(rng):
    matrix = spd_matrix(rng)
    op = FisherOperator(lambda v: matrix @ v, 6, damping=0.1)
    rhs = rng.normal(size=6)
    solution = conjugate_gradient_solve(op, rhs, max_iters=50)
    np.testing.assert_allclose((matrix + 0.1 * np.eye(6)) @ solution, rhs, atol=1e-7)


def test_cg_error_decreases_in_the_operator_norm(rng):
    matrix = spd_matrix(rng, 10) + 0.1 * np.eye(10)
    op = FisherOperator(lambda v: matrix @ v, 10, damping=0.0)
    rhs = rng.normal(size=10)
    exact = np.linalg.solve(matrix, rhs)
    errors = []

    def track(x):
        e = x - exact
        errors.append(float(e @ matrix @ e))

    conjugate_gradient_solve(op, rhs, max_iters=10, tol=1e-14, callback=track)
    assert len(errors) >= 2
    assert all(later <= earlier * (1.0 + 1e-9) for earlier, later in zip(errors, errors[1:]))


def test_cg_of_zero_rhs_is_zero():
    op = FisherOperator(lambda v: v, 3)
    np.testing.assert_array_equal(conjugate_gradient_solve(op, np.zeros(3)), np.zeros(3))


def test_cg_rejects_non_finite_rhs():
    op = FisherOperator(lambda v: v, 2)
    with pytest.raises(NumericalError):
        conjugate_gradient_solve(op, np.array([np.inf, 0.0]))


def test_negative_damping_is_rejected():
    with pytest.raises(ConfigurationError):
        FisherOperator(lambda v: v, 2, damping=-1.0)


def test_line_search_halves_until_the_kl_fits():
    def evaluate(theta):
        return float(theta[0]), float(theta[0] ** 2)

    result = backtracking_line_search(evaluate, np.zeros(1), np.array([1.0]), max_kl=0.1)
    assert result.accepted
    assert result.step_fraction == pytest.approx(0.25)
    assert result.backtracks == 2
    assert result.kl <= 0.1


def test_line_search_rejects_steps_that_do_not_improve():
    def evaluate(theta):
        return -float(theta[0]), 0.0

    theta = np.array([3.0])
    result = backtracking_line_search(evaluate, theta, np.array([1.0]), max_kl=0.1, max_backtracks=5)
    assert not result.accepted
    np.testing.assert_array_equal(result.params, theta)
    assert result.params is not theta
