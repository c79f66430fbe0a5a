import numpy as np
import pytest

from cbfaug.design import (ConstraintBox, PolynomialBank, bank_from_alpha, build_design, modified_output,
                           nested_invariance, weight_identity_check)
from cbfaug.errors import DimensionMismatch
from cbfaug.lti import RelativeDegreeVector, StateSpaceModel, relative_degree
from oracles import output_derivatives, random_plant


def double_integrator_design(roots=(-1.0, -2.0)):
    model = StateSpaceModel(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]], C_lim=[[1.0, 0.0]])
    r = relative_degree(model)
    return build_design(model, PolynomialBank((tuple(roots),)), r)


def test_scalar_design_values(scalar_design):
    design = scalar_design.cbf
    assert tuple(design.r) == (1,)
    np.testing.assert_allclose(design.H_x, [[2.0]])
    np.testing.assert_allclose(design.H_u, [[1.0]])
    np.testing.assert_allclose(design.K_CBF, [[2.0]])
    np.testing.assert_allclose(design.A_cl, [[-1.0]])
    np.testing.assert_allclose(design.alpha, [1.0])


def test_double_integrator_design():
    design = double_integrator_design()
    # (A + I)(A + 2I) = A^2 + 3A + 2I
    np.testing.assert_allclose(design.H_x, [[2.0, 3.0]])
    np.testing.assert_allclose(design.H_u, [[1.0]])
    np.testing.assert_allclose(design.alpha_pi, [[2.0]])
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(design.A_cl).real), [-2.0, -1.0], atol=1e-12)


def test_modified_output_matches_repeated_differentiation(rng):
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -2.0, -3.0]])
    B = np.array([[0.0], [0.0], [1.0]])
    c = np.array([1.0, 0.0, 0.0])
    model = StateSpaceModel(A=A, B=B, C_lim=[c])
    roots = (-1.0, -4.0, -6.0)
    design = build_design(model, PolynomialBank((roots,)), relative_degree(model))
    coeffs = np.poly(roots)[::-1]
    for _ in range(20):
        x = rng.normal(size=3)
        u = rng.normal(size=1)
        derivatives = output_derivatives(A, B, c, x, u, 3)
        np.testing.assert_allclose(modified_output(design, x, u), [coeffs @ derivatives], rtol=1e-10, atol=1e-10)


def test_weight_identity_on_random_designs(rng):
    count = 0
    while count < 50:
        n, m = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        if m > n:
            continue
        A, B, C_lim, _, _ = random_plant(rng, n, m, with_reg=False)
        model = StateSpaceModel(A=A, B=B, C_lim=C_lim)
        r = relative_degree(model)
        if np.linalg.cond(C_lim @ B) > 1e3:
            continue
        bank = PolynomialBank(tuple(tuple(-rng.uniform(0.5, 5.0, size=ri)) for ri in r))
        design = build_design(model, bank, r)
        assert weight_identity_check(design) <= 1e-10
        np.testing.assert_allclose(design.H_u_inv @ design.H_u, np.eye(m), atol=1e-10)
        count += 1


def test_weight_identity_scenarios(scalar_design, aircraft_design):
    assert weight_identity_check(scalar_design.cbf) <= 1e-10
    assert weight_identity_check(aircraft_design.cbf) <= 1e-10


def test_lu_solve_matches_inverse(rng):
    A, B, C_lim, _, _ = random_plant(rng, 4, 2, with_reg=False)
    model = StateSpaceModel(A=A, B=B, C_lim=C_lim)
    r = relative_degree(model)
    design = build_design(model, bank_from_alpha([2.0, 3.0], r), r)
    rhs = rng.normal(size=(5, 2))
    np.testing.assert_allclose(design.solve(rhs), rhs @ design.H_u_inv.T, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(design.solve(rhs[0]), design.H_u_inv @ rhs[0], rtol=1e-10, atol=1e-12)


def test_bank_from_alpha():
    bank = bank_from_alpha([80.0, 8.0, 40.0, 40.0], RelativeDegreeVector((1, 1, 1, 2)))
    assert bank.orders == (1, 1, 1, 2)
    assert bank.roots[0] == (-80.0,)
    np.testing.assert_allclose(bank.roots[3], (-np.sqrt(40.0), -np.sqrt(40.0)))
    np.testing.assert_allclose(bank.alpha(), [80.0, 8.0, 40.0, 40.0])
    np.testing.assert_allclose(bank_from_alpha([27.0], (3,)).roots[0], (-3.0, -3.0, -3.0))
    with pytest.raises(DimensionMismatch):
        bank_from_alpha([1.0], (1, 1))
    with pytest.raises(ValueError):
        bank_from_alpha([0.0], (1,))


def test_bank_rejects_nonnegative_roots():
    with pytest.raises(ValueError):
        PolynomialBank(((-1.0, 0.5),))


def test_bank_order_must_match_relative_degree():
    model = StateSpaceModel(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]], C_lim=[[1.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        build_design(model, PolynomialBank(((-1.0,),)), RelativeDegreeVector((2,)))


def test_constraint_box():
    box = ConstraintBox([-1.0, 0.0], [1.0, 2.0])
    assert box.m == 2
    np.testing.assert_allclose(box.span, [2.0, 2.0])
    np.testing.assert_allclose(box.center, [0.0, 1.0])
    assert box.contains([0.0, 1.0], strict=True)
    assert box.contains([1.0, 2.0]) and not box.contains([1.0, 2.0], strict=True)
    assert box.stack(ConstraintBox([-3.0], [3.0])).m == 3
    with pytest.raises(ValueError):
        ConstraintBox([0.5], [0.5])
    with pytest.raises(DimensionMismatch):
        ConstraintBox([0.0, 0.0], [1.0])


def test_nested_invariance(rng):
    design = double_integrator_design()
    box = ConstraintBox([-1.0], [1.0])
    x = rng.uniform(-0.5, 0.5, size=(100, 2))
    u = rng.uniform(-0.1, 0.1, size=(100, 1))
    result = nested_invariance(design, box, x, u)
    assert result.original_inside
    assert result.holds
    outside = nested_invariance(design, box, [[2.0, 0.0]], [[0.0]])
    assert not outside.original_inside
    # H_x x + H_u u = 4, alpha y_max = 2
    assert not outside.modified_inside
    assert outside.holds
