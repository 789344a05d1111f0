#!/usr/bin/env python3
"""
🧪 Feature maps: dimensions, analytic Jacobians, Fourier bandwidth calibration
"""

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from src.td_regularization.errors import ConfigurationError, DataError
from src.td_regularization.features import (
    FourierBasis,
    IdentityBasis,
    PolynomialBasis,
    fourier_features,
    make_fourier_basis,
    mean_pairwise_distance,
    polynomial_features,
)


def numeric_jacobian(basis, x, eps=1e-6):
    columns = []
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = eps
        columns.append((basis(x + step) - basis(x - step)) / (2.0 * eps))
    return np.stack(columns, axis=1)


@pytest.mark.parametrize("degree, expected", [(1, 5), (2, 15), (3, 35)])
def test_polynomial_dimension(degree, expected):
    assert PolynomialBasis(4, degree).output_dim == expected


def test_polynomial_constant_first_and_monomials():
    basis = PolynomialBasis(2, 2)
    np.testing.assert_allclose(basis(np.array([2.0, 3.0])), [1.0, 2.0, 3.0, 4.0, 6.0, 9.0])


def test_polynomial_features_concatenates_state_and_action():
    basis = PolynomialBasis(4, 2)
    s, a = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    np.testing.assert_allclose(polynomial_features(basis, s, a), basis(np.array([1.0, 2.0, 3.0, 4.0])))


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_polynomial_jacobian(rng, degree):
    basis = PolynomialBasis(4, degree)
    x = rng.normal(size=4)
    np.testing.assert_allclose(basis.jacobian(x), numeric_jacobian(basis, x), atol=1e-6)


def test_dimension_mismatch_is_rejected():
    with pytest.raises(ConfigurationError):
        PolynomialBasis(3, 2).transform(np.zeros((2, 4)))


def test_identity_basis():
    basis = IdentityBasis(3)
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(basis(x), x)
    np.testing.assert_array_equal(basis.jacobian(x), np.eye(3))


def test_fourier_jacobian(rng):
    states = rng.normal(size=(200, 3))
    basis = make_fourier_basis(25, states, rng)
    x = rng.normal(size=3)
    np.testing.assert_allclose(basis.jacobian(x), numeric_jacobian(basis, x), atol=1e-7)
    assert np.all(np.abs(basis.transform(states)) <= 1.0)
    np.testing.assert_allclose(fourier_features(basis, x), np.sin(basis.projection @ x + basis.phases), atol=1e-12)


def test_fourier_bandwidth_is_mean_pairwise_distance(rng):
    states = rng.normal(size=(300, 2))
    basis = make_fourier_basis(10, states, np.random.default_rng(1))
    assert basis.bandwidth == pytest.approx(np.mean(pdist(states)))
    assert basis.count == 10
    assert np.all((basis.phases >= -np.pi) & (basis.phases < np.pi))


def test_sampled_pairwise_distance_is_close_to_exact(rng):
    states = rng.normal(size=(1500, 2))
    exact = np.mean(pdist(states))
    assert mean_pairwise_distance(states, rng) == pytest.approx(exact, rel=1e-9)
    many = rng.normal(size=(3000, 2))
    assert mean_pairwise_distance(many, rng) == pytest.approx(np.mean(pdist(many)), rel=1e-2)


def test_identical_states_give_no_bandwidth(rng):
    with pytest.raises(DataError):
        make_fourier_basis(5, np.ones((10, 2)), rng)
    with pytest.raises(DataError):
        make_fourier_basis(5, np.ones((1, 2)), rng)


def test_fourier_save_and_load(tmp_path, rng):
    basis = make_fourier_basis(8, rng.normal(size=(50, 2)), rng)
    path = tmp_path / "basis.npz"
    basis.save(path)
    loaded = FourierBasis.load(path)
    x = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(loaded.transform(x), basis.transform(x))
    assert loaded.bandwidth == basis.bandwidth
