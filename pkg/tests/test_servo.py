import numpy as np
import pytest
import scipy.linalg as la

from cbfaug.design import ConstraintBox, PolynomialBank
from cbfaug.errors import (DesignError, DimensionMismatch, NonStabilizable, SingularKI,
                           SingularServoMatrix)
from cbfaug.lti import StateSpaceModel, hurwitz, relative_degree
from cbfaug.policy import pi_star
from cbfaug.servo import (active_constraint_matrix, build_extended, closed_loop_dc_gain, extended_baseline,
                          extended_cbf_gain, extended_policy, feedforward_gain, integrator_extension,
                          lqr_pi_design, proportional_baseline, riccati_residual, solve_care)
from oracles import random_plant


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))


def scalar_plant():
    return StateSpaceModel(A=[[1.0]], B=[[1.0]], C_lim=[[1.0]], C_reg=[[1.0]], D_reg=[[0.0]])


def test_scalar_feedforward_is_three():
    baseline = proportional_baseline(scalar_plant(), [[4.0]])
    np.testing.assert_allclose(baseline.K_ff, [[3.0]], rtol=1e-12)
    np.testing.assert_allclose(closed_loop_dc_gain(scalar_plant(), baseline.K_x, baseline.K_ff), [[1.0]],
                               atol=1e-12)
    np.testing.assert_allclose(baseline.control(np.array([0.5]), np.array([1.0])), [1.0])


def test_feedforward_dc_unity_on_random_plants(rng):
    count = 0
    while count < 30:
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        if m > n:
            continue
        A, B, C_lim, C_reg, D_reg = random_plant(rng, n, m)
        if np.linalg.cond(np.block([[A, B], [C_reg, D_reg]])) > 1e6:
            continue
        model = StateSpaceModel(A=A, B=B, C_lim=C_lim, C_reg=C_reg, D_reg=D_reg)
        _, K_x = solve_care(A, B, np.eye(n), np.eye(m))
        baseline = proportional_baseline(model, K_x)
        dc = closed_loop_dc_gain(model, baseline.K_x, baseline.K_ff)
        assert np.linalg.norm(dc - np.eye(m)) <= 1e-8 * max(1.0, np.linalg.norm(baseline.K_ff))
        count += 1


def test_feedforward_rejects_zero_at_origin():
    model = StateSpaceModel(A=[[0.0]], B=[[1.0]], C_lim=[[1.0]], C_reg=[[0.0]], D_reg=[[0.0]])
    with pytest.raises(SingularServoMatrix):
        feedforward_gain(model, [[1.0]])


def test_proportional_baseline_must_be_hurwitz():
    with pytest.raises(DesignError):
        proportional_baseline(scalar_plant(), [[0.5]])
    with pytest.raises(DimensionMismatch):
        proportional_baseline(scalar_plant(), [[4.0, 1.0]])


def test_care_matches_scipy(rng):
    for _ in range(20):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 3))
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, m))
        Q = np.diag(rng.uniform(0.1, 2.0, size=n))
        R = np.diag(rng.uniform(0.5, 2.0, size=m))
        P, K = solve_care(A, B, Q, R)
        expected = la.solve_continuous_are(A, B, Q, R)
        np.testing.assert_allclose(P, expected, rtol=1e-7, atol=1e-8 * np.linalg.norm(expected))
        np.testing.assert_allclose(K, la.solve(R, B.T @ P), rtol=1e-12, atol=1e-12)
        assert riccati_residual(A, B, Q, R, P) <= 1e-8 * max(1.0, np.linalg.norm(Q))
        assert hurwitz(A - B @ K)[0]


def test_care_input_validation():
    A, B = np.eye(2), np.eye(2)
    with pytest.raises(ValueError):
        solve_care(A, B, np.eye(2), -np.eye(2))
    with pytest.raises(ValueError):
        solve_care(A, B, -np.eye(2), np.eye(2))


def test_care_rejects_unstabilizable_pair():
    with pytest.raises(NonStabilizable):
        solve_care(np.diag([1.0, -1.0]), np.array([[0.0], [1.0]]), np.eye(2), np.eye(1))


def test_lqr_weights_dimension(aircraft_config):
    with pytest.raises(DimensionMismatch):
        lqr_pi_design(aircraft_config.plant(), np.ones(3), np.ones(2))


def test_aircraft_relative_degree(aircraft_design):
    assert tuple(aircraft_design.extended.r_zlim) == (1, 2)
    assert str(aircraft_design.cbf.r) == '(1 1 1 2)'


def test_aircraft_block_inverse(aircraft_design):
    ext = aircraft_design.extended
    assert np.linalg.cond(ext.H_u_tilde) < 1e8
    assert relative_error(ext.H_u_tilde_inv, la.inv(ext.H_u_tilde)) <= 1e-10
    assert relative_error(ext.H_u_tilde, ext.design.H_u) <= 1e-10
    assert relative_error(ext.H_x_ext, ext.design.H_x) <= 1e-10


def test_aircraft_cbf_gain_closed_form(aircraft_design):
    ext = aircraft_design.extended
    K_CBF = extended_cbf_gain(ext)
    assert relative_error(K_CBF, ext.design.H_u_inv @ ext.design.H_x) <= 1e-10
    m = ext.m
    np.testing.assert_array_equal(K_CBF[m:, :m], np.zeros((m, m)))


def test_aircraft_closed_loop_hurwitz(aircraft_design):
    ext = aircraft_design.extended
    assert hurwitz(ext.A_ext - ext.B_ext @ ext.K_CBF_ext)[0]
    assert hurwitz(ext.A_cl)[0]


def test_aircraft_riccati(aircraft_config, aircraft_design):
    A, B = integrator_extension(aircraft_config.plant())
    Q, R = np.diag(aircraft_config.Q), np.diag(aircraft_config.R)
    baseline = aircraft_design.baseline
    assert baseline.riccati_residual <= 1e-8 * max(1.0, np.linalg.norm(Q))
    np.testing.assert_allclose(baseline.P, la.solve_continuous_are(A, B, Q, R), rtol=1e-6, atol=1e-9)
    assert hurwitz(A - B @ baseline.K_x)[0]
    np.testing.assert_array_equal(baseline.K_x, np.hstack([baseline.K_I, baseline.K_P]))


def test_dual_path_on_random_plants(rng):
    count, attempts = 0, 0
    while count < 100:
        attempts += 1
        assert attempts < 2000
        n, m = int(rng.integers(2, 5)), int(rng.integers(1, 3))
        A, B, C_lim, C_reg, D_reg = random_plant(rng, n, m)
        plant = StateSpaceModel(A=A, B=B, C_lim=C_lim, C_reg=C_reg, D_reg=D_reg)
        if np.linalg.cond(np.block([[A, B], [C_reg, D_reg]])) > 1e4 or np.linalg.cond(C_lim @ B) > 1e3:
            continue
        try:
            baseline = lqr_pi_design(plant, np.ones(n + m), np.ones(m))
        except DesignError:
            continue
        if np.linalg.cond(baseline.K_I) > 1e3:
            continue
        r = relative_degree(plant)
        zlim_bank = PolynomialBank(tuple(tuple(-rng.uniform(0.5, 5.0, size=ri)) for ri in r))
        u_roots = -rng.uniform(1.0, 10.0, size=m)
        box = ConstraintBox(-np.ones(m), np.ones(m))
        ext = build_extended(plant, baseline.K_I, baseline.K_P, zlim_bank, u_roots, box, box)
        assert relative_error(ext.H_u_tilde_inv, ext.design.H_u_inv) <= 1e-10
        assert relative_error(ext.K_CBF_ext, ext.design.K_CBF) <= 1e-10
        count += 1


def test_singular_integral_gain(aircraft_config):
    plant = aircraft_config.plant()
    box = ConstraintBox(-np.ones(2), np.ones(2))
    bank = PolynomialBank(((-1.0,), (-1.0, -1.0)))
    with pytest.raises(SingularKI):
        build_extended(plant, np.ones((2, 2)), np.ones((2, 3)), bank, [-1.0, -1.0], box, box,
                       zero_tol=aircraft_config.zero_tol)


def test_extended_policy_splits_pi(aircraft_design, rng):
    ext = aircraft_design.extended
    x = rng.normal(scale=0.01, size=ext.n)
    u_bl = -ext.baseline.K_x @ x
    y_cmd = np.array([0.07, 0.03])
    v, w = extended_policy(ext, x, u_bl, y_cmd)
    pi = pi_star(ext.design, ext.box, x, extended_baseline(y_cmd, u_bl))
    np.testing.assert_array_equal(np.concatenate([v, w]), pi)


def test_active_constraint_matrix(aircraft_design):
    ext = aircraft_design.extended
    delta = active_constraint_matrix(ext, (1, 1, 1, 1))
    assert delta.shape == (2, 4)
    np.testing.assert_array_equal(delta[:, :2], np.zeros((2, 2)))
    np.testing.assert_array_equal(active_constraint_matrix(ext, (0, 0, 0, 0)), np.zeros((2, 4)))
    with pytest.raises(DimensionMismatch):
        active_constraint_matrix(ext, (1, 1))


def test_unit_integral_gain_damping_block():
    plant = scalar_plant()
    box = ConstraintBox([-1.0], [1.0])
    ext = build_extended(plant, np.eye(1), [[4.0]], PolynomialBank(((-1.0,),)), [-1.0], box, box)
    K_CBF = extended_cbf_gain(ext)
    np.testing.assert_allclose(K_CBF[:1, :1], np.eye(1), rtol=1e-12)
    np.testing.assert_allclose(ext.K_CBF_ext[:1, :1], np.eye(1), rtol=1e-12)
    assert relative_error(K_CBF, ext.design.H_u_inv @ ext.design.H_x) <= 1e-10
