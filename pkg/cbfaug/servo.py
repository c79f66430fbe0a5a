'''
Baseline servo controllers and the anti-windup extended CBF design
'''

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from cbfaug.design import PolynomialBank, build_design
from cbfaug.errors import (BlockMismatch, DesignError, DimensionMismatch, NonStabilizable,
                           RiccatiNoConvergence, SingularKI, SingularServoMatrix)
from cbfaug.lti import (SINGULAR_COND, ZERO_TOL, RelativeDegreeVector, StateSpaceModel,
                        frozen_array, hurwitz, matrix_polynomial, relative_degree)
from cbfaug.policy import pi_star

logger = logging.getLogger(__name__)

DC_TOL = 1e-8
BLOCK_TOL = 1e-10
CARE_RTOL = 1e-12
CARE_MAXITER = 100


@dataclass(frozen=True, eq=False)
class BaselineController:
    '''u_bl = -K_x x + K_ff y_cmd.

    For the PI form K_x = (K_I K_P) acts on the stacked state (e_yI, x_p)
    and K_ff is absent.
    '''
    K_x: np.ndarray
    K_ff: Optional[np.ndarray] = None
    K_I: Optional[np.ndarray] = None
    K_P: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    riccati_residual: Optional[float] = None

    def __post_init__(self):
        for name in ('K_x', 'K_ff', 'K_I', 'K_P', 'P'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, frozen_array(value))

    @property
    def is_servo(self):
        return self.K_I is not None

    def control(self, x, y_cmd=None):
        u = -np.asarray(x, dtype=float) @ self.K_x.T
        if self.K_ff is not None and y_cmd is not None:
            u = u + np.asarray(y_cmd, dtype=float) @ self.K_ff.T
        return u


def closed_loop_dc_gain(model, K_x, K_ff):
    A_bl = model.A - model.B @ K_x
    C_bl = model.C_reg - model.D_reg @ K_x
    try:
        x_ss = la.solve(A_bl, model.B @ K_ff)
    except la.LinAlgError:
        raise SingularServoMatrix('closed loop A - B K_x is singular, DC gain undefined')
    return -C_bl @ x_ss + model.D_reg @ K_ff


def feedforward_gain(model, K_x):
    '''K_ff = (K_x I) [[A, B], [C_reg, D_reg]]^{-1} (0; I), checked for unity DC gain.'''
    if model.C_reg is None:
        raise DimensionMismatch('feedforward design needs C_reg and D_reg')
    K_x = np.asarray(K_x, dtype=float)
    n, m = model.n, model.m
    M = np.block([[model.A, model.B], [model.C_reg, model.D_reg]])
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularServoMatrix('servo matrix [[A, B], [C_reg, D_reg]] is singular '
                                  '(transmission zero at the origin), cond = {:.3e}'.format(cond))
    rhs = np.vstack([np.zeros((n, m)), np.eye(m)])
    K_ff = np.hstack([K_x, np.eye(m)]) @ la.solve(M, rhs)

    residual = np.linalg.norm(closed_loop_dc_gain(model, K_x, K_ff) - np.eye(m))
    if residual > DC_TOL * max(1.0, np.linalg.norm(K_ff)):
        raise SingularServoMatrix('feedforward DC gain residual {:.3e} exceeds tolerance'.format(residual))
    logger.debug('feedforward gain DC residual %.3e', residual)
    return K_ff


def proportional_baseline(model, K_x):
    K_x = frozen_array(K_x)
    if K_x.shape != (model.m, model.n):
        raise DimensionMismatch('K_x must be {}x{}, got {}'.format(model.m, model.n, K_x.shape))
    stable, abscissa = hurwitz(model.A - model.B @ K_x)
    if not stable:
        raise DesignError('baseline closed loop is not Hurwitz (abscissa {:.3e})'.format(abscissa))
    K_ff = feedforward_gain(model, K_x) if model.C_reg is not None else None
    return BaselineController(K_x=K_x, K_ff=K_ff)


def riccati_residual(A, B, Q, R, P):
    return float(np.linalg.norm(A.T @ P + P @ A - P @ B @ la.solve(R, B.T @ P) + Q))


def _stabilizing_gain(A, B):
    n = A.shape[0]
    beta = max(0.0, float(np.max(-la.eigvals(A).real))) + 1.0
    X = la.solve_continuous_lyapunov(A + beta * np.eye(n), 2.0 * B @ B.T)
    if np.linalg.cond(X) > SINGULAR_COND:
        raise NonStabilizable('(A, B) has uncontrollable modes, the Lyapunov bootstrap failed')
    return B.T @ la.inv(X)


def solve_care(A, B, Q, R):
    '''Newton-Kleinman iteration for A^T P + P A - P B R^{-1} B^T P + Q = 0.

    Returns (P, K) with K = R^{-1} B^T P.
    '''
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if np.any(la.eigvalsh(R) <= 0):
        raise ValueError('R must be positive definite')
    if np.any(la.eigvalsh(0.5 * (Q + Q.T)) < -1e-12 * max(1.0, np.linalg.norm(Q))):
        raise ValueError('Q must be positive semi-definite')

    K = _stabilizing_gain(A, B)
    P = np.zeros_like(A)
    for it in range(CARE_MAXITER):
        A_k = A - B @ K
        if not hurwitz(A_k)[0]:
            raise NonStabilizable('Newton-Kleinman iterate lost stability, (Q, A) is not detectable')
        P_next = la.solve_continuous_lyapunov(A_k.T, -(Q + K.T @ R @ K))
        P_next = 0.5 * (P_next + P_next.T)
        K = la.solve(R, B.T @ P_next)
        change = np.linalg.norm(P_next - P) / max(1.0, np.linalg.norm(P_next))
        P = P_next
        if change < CARE_RTOL:
            break
    else:
        raise RiccatiNoConvergence('no convergence after {} Newton-Kleinman steps'.format(CARE_MAXITER))

    residual = riccati_residual(A, B, Q, R, P)
    if residual > 1e-8 * max(1.0, np.linalg.norm(Q)):
        raise RiccatiNoConvergence('Riccati residual {:.3e} too large'.format(residual))
    if not hurwitz(A - B @ K)[0]:
        raise NonStabilizable('LQR closed loop is not Hurwitz, (Q, A) is not detectable')
    logger.debug('CARE converged in %d steps, residual %.3e', it + 1, residual)
    return P, K


def integrator_extension(plant):
    '''(A, B) of the plant with tracking-error integrators e_yI stacked on top.'''
    if plant.C_reg is None:
        raise DimensionMismatch('PI design needs C_reg and D_reg')
    m, n_p = plant.m, plant.n
    A = np.block([[np.zeros((m, m)), plant.C_reg], [np.zeros((n_p, m)), plant.A]])
    B = np.vstack([plant.D_reg, plant.B])
    return A, B


def lqr_pi_design(plant, Q, R):
    A, B = integrator_extension(plant)
    Q = np.diag(Q) if np.ndim(Q) == 1 else np.asarray(Q, dtype=float)
    R = np.diag(R) if np.ndim(R) == 1 else np.asarray(R, dtype=float)
    if Q.shape != A.shape or R.shape != (plant.m, plant.m):
        raise DimensionMismatch('Q must be {0}x{0} and R {1}x{1}'.format(A.shape[0], plant.m))

    P, K = solve_care(A, B, Q, R)
    residual = riccati_residual(A, B, Q, R, P)
    logger.info('LQR PI design: Riccati residual %.3e, closed-loop abscissa %.4f',
                residual, hurwitz(A - B @ K)[1])
    m = plant.m
    return BaselineController(K_x=K, K_I=K[:, :m], K_P=K[:, m:], P=P, riccati_residual=residual)


@dataclass(frozen=True, eq=False)
class ExtendedServoDesign:
    '''CBF design of the PI servo on the state (e_yI, x_p) with input (v, w).

    The first m limited channels are the baseline command u_bl, the last m
    are the plant limited outputs z_lim.
    '''
    plant: StateSpaceModel
    baseline: BaselineController
    model: StateSpaceModel
    design: object
    box: object
    r_zlim: RelativeDegreeVector
    Lambda_u: np.ndarray
    H_u_plant: np.ndarray
    H_xp: np.ndarray
    H_u_tilde: np.ndarray
    H_u_tilde_inv: np.ndarray
    H_x_ext: np.ndarray
    K_CBF_ext: np.ndarray

    @property
    def m(self):
        return self.plant.m

    @property
    def n(self):
        return self.model.n

    @property
    def A_ext(self):
        return self.model.A

    @property
    def B_ext(self):
        return self.model.B

    @property
    def C_lim_ext(self):
        return self.model.C_lim

    @property
    def alpha_pi_ext(self):
        return self.design.alpha_pi

    @property
    def A_cl(self):
        return self.design.A_cl


def extended_model(plant, K_I, K_P):
    m, n_p = plant.m, plant.n
    A_ext, B_bar = integrator_extension(plant)
    B_ext = np.block([[np.eye(m), plant.D_reg], [np.zeros((n_p, m)), plant.B]])
    C_lim_ext = np.block([[-K_I, -K_P], [np.zeros((m, m)), plant.C_lim]])
    return StateSpaceModel(
        A=A_ext, B=B_ext, C_lim=C_lim_ext,
        state_names=tuple('e_{}'.format(name) for name in plant.reg_names) + plant.state_names,
        input_names=tuple('v_{}'.format(name) for name in plant.reg_names) + plant.input_names,
        lim_names=tuple('u_bl_{}'.format(name) for name in plant.input_names) + plant.lim_names)


def _compare(name, closed_form, generic):
    error = np.linalg.norm(closed_form - generic) / max(1.0, np.linalg.norm(generic))
    if not error <= BLOCK_TOL:
        raise BlockMismatch(name, error)
    return error


def build_extended(plant, K_I, K_P, zlim_bank, u_roots, input_box, output_box, zero_tol=ZERO_TOL):
    '''Assemble the extended servo design, both generically and in closed form.

    zlim_bank holds the filter roots of the plant limited outputs and u_roots
    one first-order root per baseline command channel.
    '''
    m, n_p = plant.m, plant.n
    K_I = np.asarray(K_I, dtype=float)
    K_P = np.asarray(K_P, dtype=float)
    if K_I.shape != (m, m) or K_P.shape != (m, n_p):
        raise DimensionMismatch('K_I must be {0}x{0} and K_P {0}x{1}'.format(m, n_p))
    cond_ki = np.linalg.cond(K_I)
    if not np.isfinite(cond_ki) or cond_ki > SINGULAR_COND:
        raise SingularKI('integral gain K_I is singular (cond = {:.3e})'.format(cond_ki))
    u_roots = [float(lam) for lam in u_roots]
    if len(u_roots) != m:
        raise DimensionMismatch('{} u_bl roots for m = {}'.format(len(u_roots), m))

    r_zlim = relative_degree(plant, zero_tol)
    model = extended_model(plant, K_I, K_P)
    bank = PolynomialBank(tuple((lam,) for lam in u_roots)).stack(zlim_bank)
    design = build_design(model, bank, RelativeDegreeVector((1,) * m + tuple(r_zlim)))

    H_u = np.vstack([plant.C_lim[i] @ np.linalg.matrix_power(plant.A, r_zlim[i] - 1) @ plant.B
                     for i in range(m)])
    H_xp = np.vstack([plant.C_lim[i] @ matrix_polynomial(plant.A, zlim_bank.roots[i]) for i in range(m)])
    Lambda_u = np.diag(u_roots)
    K_x = np.hstack([K_I, K_P])
    KB = K_I @ plant.D_reg + K_P @ plant.B

    H_u_tilde = np.block([[-K_I, -KB], [np.zeros((m, m)), H_u]])
    H_x_ext = np.vstack([Lambda_u @ K_x - K_x @ model.A, np.hstack([np.zeros((m, m)), H_xp])])
    H_u_inv = la.inv(H_u)
    K_I_inv = la.inv(K_I)
    H_u_tilde_inv = np.block([[-K_I_inv, -K_I_inv @ KB @ H_u_inv], [np.zeros((m, m)), H_u_inv]])

    _compare('H_u_tilde', H_u_tilde, design.H_u)
    _compare('H_x', H_x_ext, design.H_x)
    _compare('H_u_tilde inverse', H_u_tilde_inv, design.H_u_inv)

    ext = ExtendedServoDesign(
        plant=plant, baseline=BaselineController(K_x=K_x, K_I=K_I, K_P=K_P), model=model,
        design=design, box=input_box.stack(output_box), r_zlim=r_zlim,
        Lambda_u=frozen_array(Lambda_u), H_u_plant=frozen_array(H_u), H_xp=frozen_array(H_xp),
        H_u_tilde=frozen_array(H_u_tilde), H_u_tilde_inv=frozen_array(H_u_tilde_inv),
        H_x_ext=frozen_array(H_x_ext), K_CBF_ext=frozen_array(design.K_CBF))
    K_CBF = extended_cbf_gain(ext)
    object.__setattr__(ext, 'K_CBF_ext', frozen_array(K_CBF))
    logger.info('extended servo design: r = %s, cond(H_u_tilde) = %.3e', design.r, design.cond)
    return ext


def extended_cbf_gain(design):
    '''Explicit CBF gain of the extended servo, checked against H_u_tilde^{-1} H_x.

    Top row: (-K_I^{-1} Lambda_u K_I,
              K_I^{-1} (K_x (A_ext - B_bar H_u^{-1} (0 H_xp))[:, m:] - Lambda_u K_P)).
    Bottom row: (0, H_u^{-1} H_xp).
    '''
    m = design.m
    plant = design.plant
    K_I, K_P = design.baseline.K_I, design.baseline.K_P
    K_x = np.hstack([K_I, K_P])
    B_bar = np.vstack([plant.D_reg, plant.B])
    H_u_inv_H_xp = la.solve(design.H_u_plant, design.H_xp)

    drift = design.A_ext - B_bar @ np.hstack([np.zeros((m, m)), H_u_inv_H_xp])
    top_left = -la.solve(K_I, design.Lambda_u @ K_I)
    top_right = la.solve(K_I, K_x @ drift[:, m:] - design.Lambda_u @ K_P)
    K_CBF = np.block([[top_left, top_right], [np.zeros((m, m)), H_u_inv_H_xp]])

    _compare('K_CBF', K_CBF, design.design.K_CBF)
    return K_CBF


def extended_baseline(y_cmd, u_bl):
    '''u_tilde_bl = (-y_cmd; u_bl).'''
    return np.concatenate([-np.asarray(y_cmd, dtype=float), np.asarray(u_bl, dtype=float)], axis=-1)


def extended_policy(design, x_ext, u_bl, y_cmd):
    m = design.m
    pi = pi_star(design.design, design.box, x_ext, extended_baseline(y_cmd, u_bl))
    return pi[..., :m], pi[..., m:]


def active_constraint_matrix(design, pattern):
    '''delta = (0 I) H_u_tilde^{-1} diag(pattern), the m x 2m matrix of active constraints.'''
    pattern = np.asarray(pattern, dtype=float)
    if pattern.shape != (2 * design.m,):
        raise DimensionMismatch('pattern must have {} entries, got {}'.format(2 * design.m, pattern.shape))
    return design.H_u_tilde_inv[design.m:] * pattern
