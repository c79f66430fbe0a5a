import itertools

import numpy as np
import pytest

from cbfaug.errors import DimensionMismatch, NoRelativeDegree, NotControllable, SingularHu
from cbfaug.lti import (RelativeDegreeVector, StateSpaceModel, controllability_rank, control_sensitivity,
                        hurwitz, markov_row, matrix_polynomial, matrix_polynomial_coeffs,
                        polynomial_coefficients, relative_degree, require_controllable)
from oracles import random_plant, routh_stable


def chain(n):
    '''n integrators in series, input on the last one.'''
    A = np.diag(np.ones(n - 1), 1)
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    return A, B


def test_relative_degree_of_integrator_chain():
    A, B = chain(3)
    model = StateSpaceModel(A=A, B=B, C_lim=[[1.0, 0.0, 0.0]])
    r = relative_degree(model)
    assert tuple(r) == (3,)
    assert str(r) == '(3)'
    assert markov_row(model, 0, 0)[0] == 0.0
    assert markov_row(model, 0, 2)[0] == 1.0


def test_relative_degree_mixed_channels():
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    B = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    model = StateSpaceModel(A=A, B=B, C_lim=[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r = relative_degree(model)
    assert tuple(r) == (2, 1)
    np.testing.assert_array_equal(control_sensitivity(model, r), np.eye(2))


def test_no_relative_degree_for_zero_row():
    A, B = chain(2)
    model = StateSpaceModel(A=A, B=B, C_lim=[[0.0, 0.0]])
    with pytest.raises(NoRelativeDegree) as exc:
        relative_degree(model)
    assert exc.value.channel == 0


def test_singular_control_sensitivity():
    model = StateSpaceModel(A=-np.eye(2), B=np.eye(2), C_lim=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularHu):
        relative_degree(model)


def test_zero_tol_is_relative_to_model_scale():
    A = np.array([[-1.0, 1.0], [0.0, -2.0]])
    B = np.array([[1e-4], [1.0]])
    model = StateSpaceModel(A=A, B=B, C_lim=[[1.0, 0.0]])
    assert tuple(relative_degree(model)) == (1,)
    assert tuple(relative_degree(model, zero_tol=1e-3)) == (2,)
    with pytest.raises(ValueError):
        relative_degree(model, zero_tol=0.0)


def test_model_validates_dimensions():
    with pytest.raises(DimensionMismatch):
        StateSpaceModel(A=np.eye(2), B=np.ones((3, 1)), C_lim=[[1.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        StateSpaceModel(A=np.eye(2), B=np.ones((2, 1)), C_lim=[[1.0, 0.0]], C_reg=[[1.0, 0.0]])
    model = StateSpaceModel(A=np.eye(2), B=np.ones((2, 1)), C_lim=[[1.0, 0.0]])
    assert model.state_names == ('x1', 'x2')
    assert model.channel_index('ylim1') == 0
    with pytest.raises(IndexError):
        model.channel_index(1)


def test_matrices_are_read_only():
    model = StateSpaceModel(A=np.eye(2), B=np.ones((2, 1)), C_lim=[[1.0, 0.0]])
    with pytest.raises(ValueError):
        model.A[0, 0] = 2.0


def test_matrix_polynomial_coefficient_form(rng):
    A = rng.normal(size=(4, 4))
    roots = [-0.5, -2.0, -3.0]
    np.testing.assert_allclose(matrix_polynomial(A, roots),
                               matrix_polynomial_coeffs(A, polynomial_coefficients(roots)),
                               rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(polynomial_coefficients([-1.0, -2.0]), [2.0, 3.0, 1.0])
    np.testing.assert_array_equal(matrix_polynomial(A, []), np.eye(4))


def test_matrix_polynomial_rejects_unstable_roots():
    with pytest.raises(ValueError):
        matrix_polynomial(np.eye(2), [-1.0, 0.0])


def test_hurwitz_against_routh(rng):
    for _ in range(200):
        degree = int(rng.integers(2, 6))
        real = rng.uniform(0.1, 3.0, size=degree) * rng.choice([-1.0, 1.0], size=degree)
        coeffs = np.poly(real)
        companion = np.diag(np.ones(degree - 1), -1)
        companion[0] = -coeffs[1:]
        assert hurwitz(companion)[0] == routh_stable(coeffs)


def test_hurwitz_abscissa():
    stable, abscissa = hurwitz(np.diag([-1.0, -3.0]))
    assert stable and abscissa == pytest.approx(-1.0)
    assert not hurwitz(np.zeros((2, 2)))[0]
    with pytest.raises(DimensionMismatch):
        hurwitz(np.ones((2, 3)))


def test_controllability():
    A, B = chain(3)
    model = StateSpaceModel(A=A, B=B, C_lim=[[1.0, 0.0, 0.0]])
    assert controllability_rank(model) == 3
    require_controllable(model)
    decoupled = StateSpaceModel(A=np.diag([-1.0, -2.0]), B=[[1.0], [0.0]], C_lim=[[1.0, 0.0]])
    assert controllability_rank(decoupled) == 1
    with pytest.raises(NotControllable):
        require_controllable(decoupled)


def test_relative_degree_vector():
    r = RelativeDegreeVector((1, 1, 1, 2))
    assert str(r) == '(1 1 1 2)'
    assert len(r) == 4 and r[3] == 2
    with pytest.raises(ValueError):
        RelativeDegreeVector((0, 1))


def random_basis(rng, n):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(rng.uniform(0.5, 2.0, size=n))


def test_relative_degree_survives_change_of_basis(rng):
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    B = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    C_lim = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    for _ in range(20):
        T = random_basis(rng, 3)
        T_inv = np.linalg.inv(T)
        model = StateSpaceModel(A=T_inv @ A @ T, B=T_inv @ B, C_lim=C_lim @ T)
        assert tuple(relative_degree(model)) == (2, 1)
    for _ in range(20):
        n, m = int(rng.integers(2, 6)), int(rng.integers(1, 3))
        A, B, C_lim, _, _ = random_plant(rng, n, m, with_reg=False)
        if np.linalg.cond(C_lim @ B) > 1e3:
            continue
        T = random_basis(rng, n)
        T_inv = np.linalg.inv(T)
        r = relative_degree(StateSpaceModel(A=A, B=B, C_lim=C_lim))
        assert relative_degree(StateSpaceModel(A=T_inv @ A @ T, B=T_inv @ B, C_lim=C_lim @ T)) == r


def test_matrix_polynomial_ignores_root_order(rng):
    A = rng.normal(size=(4, 4))
    roots = [-0.5, -2.0, -3.0, -7.5]
    expected = matrix_polynomial(A, roots)
    for order in itertools.permutations(roots):
        np.testing.assert_allclose(matrix_polynomial(A, list(order)), expected, rtol=0,
                                   atol=1e-12 * np.linalg.norm(expected))


def test_aircraft_markov_rows(aircraft_config):
    plant = aircraft_config.plant()
    np.testing.assert_allclose(markov_row(plant, 'sideslip', 0), [0.0, 0.015257], rtol=0, atol=1e-15)
    np.testing.assert_allclose(markov_row(plant, 'roll_rate', 0), [-7.9662, 2.6875], rtol=0, atol=1e-15)
    with pytest.raises(IndexError):
        markov_row(plant, 'sideslip', 3)
