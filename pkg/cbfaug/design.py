'''
Modified-output construction for min/max output limits
'''

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from cbfaug.errors import DimensionMismatch, SingularHu
from cbfaug.lti import (SINGULAR_COND, RelativeDegreeVector, StateSpaceModel, control_sensitivity,
                        frozen_array, matrix_polynomial, polynomial_coefficients)

logger = logging.getLogger(__name__)

WARN_COND = 1e8


@dataclass(frozen=True)
class PolynomialBank:
    '''Negative real roots of the stable filter attached to each limited channel.'''
    roots: Tuple[Tuple[float, ...], ...]

    def __post_init__(self):
        roots = tuple(tuple(float(lam) for lam in channel) for channel in self.roots)
        for i, channel in enumerate(roots):
            for lam in channel:
                if not np.isfinite(lam) or lam >= 0:
                    raise ValueError('channel {} root {} is not strictly negative'.format(i, lam))
        object.__setattr__(self, 'roots', roots)

    def __len__(self):
        return len(self.roots)

    @property
    def orders(self):
        return tuple(len(channel) for channel in self.roots)

    def alpha(self):
        '''Zero-order coefficients prod_j(-lambda_ij), one per channel.'''
        return np.array([np.prod([-lam for lam in channel]) for channel in self.roots])

    def coefficients(self, channel):
        return polynomial_coefficients(self.roots[channel])

    def stack(self, other):
        return PolynomialBank(self.roots + other.roots)


def bank_from_alpha(alpha_targets, r):
    '''Pick a repeated root per channel so that prod(-lambda) hits the alpha target.

    r_i = 1 gives lambda = -c, r_i = 2 gives lambda = -sqrt(c), and higher
    orders use -c**(1/r_i).
    '''
    alpha_targets = [float(c) for c in alpha_targets]
    if len(alpha_targets) != len(r):
        raise DimensionMismatch('{} alpha targets for {} channels'.format(len(alpha_targets), len(r)))
    roots = []
    for c, ri in zip(alpha_targets, r):
        if not c > 0:
            raise ValueError('alpha targets must be positive, got {}'.format(c))
        roots.append((-c ** (1.0 / ri),) * ri)
    return PolynomialBank(tuple(roots))


@dataclass(frozen=True, eq=False)
class ConstraintBox:
    y_min: np.ndarray
    y_max: np.ndarray

    def __post_init__(self):
        y_min = frozen_array(self.y_min, ndim=1)
        y_max = frozen_array(self.y_max, ndim=1)
        if y_min.shape != y_max.shape:
            raise DimensionMismatch('box bounds have shapes {} and {}'.format(y_min.shape, y_max.shape))
        if not (np.all(np.isfinite(y_min)) and np.all(np.isfinite(y_max))):
            raise ValueError('box bounds must be finite')
        if np.any(y_min >= y_max):
            raise ValueError('y_min must be strictly below y_max, got {} and {}'.format(y_min, y_max))
        object.__setattr__(self, 'y_min', y_min)
        object.__setattr__(self, 'y_max', y_max)

    @property
    def m(self):
        return self.y_min.shape[0]

    @property
    def span(self):
        return self.y_max - self.y_min

    @property
    def center(self):
        return 0.5 * (self.y_min + self.y_max)

    def shrink(self, fraction):
        '''Box pulled in by fraction * span on each side.'''
        if not 0.0 <= fraction < 0.5:
            raise ValueError('fraction must lie in [0, 0.5), got {}'.format(fraction))
        return ConstraintBox(self.y_min + fraction * self.span, self.y_max - fraction * self.span)

    def stack(self, other):
        return ConstraintBox(np.concatenate([self.y_min, other.y_min]),
                             np.concatenate([self.y_max, other.y_max]))

    def contains(self, y, strict=False):
        y = np.asarray(y, dtype=float)
        if strict:
            return bool(np.all(y > self.y_min) and np.all(y < self.y_max))
        return bool(np.all(y >= self.y_min) and np.all(y <= self.y_max))


@dataclass(frozen=True, eq=False)
class CbfDesign:
    model: StateSpaceModel
    r: RelativeDegreeVector
    bank: PolynomialBank
    H_x: np.ndarray
    H_u: np.ndarray
    H_u_inv: np.ndarray
    alpha_pi: np.ndarray
    K_CBF: np.ndarray
    A_cl: np.ndarray
    cond: float
    lu: Optional[tuple] = field(default=None, repr=False)

    @property
    def n(self):
        return self.H_x.shape[1]

    @property
    def m(self):
        return self.H_u.shape[0]

    @property
    def alpha(self):
        return np.diag(self.alpha_pi)

    def modified_box(self, box):
        return self.alpha * box.y_min, self.alpha * box.y_max

    def solve(self, rhs):
        '''H_u^{-1} rhs through the stored LU factors; rhs may be (m,) or (N, m).'''
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 1:
            return la.lu_solve(self.lu, rhs)
        return la.lu_solve(self.lu, rhs.T).T


def build_design(model, bank, r):
    if len(r) != model.m:
        raise DimensionMismatch('relative degree has {} channels, model has m = {}'.format(len(r), model.m))
    if bank.orders != tuple(r):
        raise DimensionMismatch('bank orders {} do not match relative degree {}'.format(bank.orders, r))

    H_x = np.vstack([model.C_lim[i] @ matrix_polynomial(model.A, bank.roots[i]) for i in range(model.m)])
    H_u = control_sensitivity(model, r)

    cond = float(np.linalg.cond(H_u))
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularHu(cond)
    if cond > WARN_COND:
        logger.warning('H_u is ill-conditioned (cond = %.3e), the policy gain will be large', cond)

    lu = la.lu_factor(H_u)
    H_u_inv = la.lu_solve(lu, np.eye(model.m))
    K_CBF = H_u_inv @ H_x
    A_cl = model.A - model.B @ K_CBF
    logger.info('built CBF design: r = %s, cond(H_u) = %.3e', r, cond)

    return CbfDesign(model=model, r=r, bank=bank,
                     H_x=frozen_array(H_x), H_u=frozen_array(H_u), H_u_inv=frozen_array(H_u_inv),
                     alpha_pi=frozen_array(np.diag(bank.alpha())), K_CBF=frozen_array(K_CBF),
                     A_cl=frozen_array(A_cl), cond=cond, lu=lu)


def weight_identity_check(design):
    '''Residual of H_u (H_u^T H_u)^{-1} H_u^T = I for the min-norm cost weight H_u^T H_u.'''
    H_u = design.H_u
    R_pi_inv = design.H_u_inv @ design.H_u_inv.T
    return float(np.linalg.norm(H_u @ R_pi_inv @ H_u.T - np.eye(design.m)))


def modified_output(design, x, u):
    '''H_x x + H_u u, row-wise for batched inputs.'''
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return x @ design.H_x.T + u @ design.H_u.T


@dataclass(frozen=True)
class NestedInvariance:
    modified_violation: float
    original_violation: float
    tol: float

    @property
    def modified_inside(self):
        return self.modified_violation <= self.tol

    @property
    def original_inside(self):
        return self.original_violation <= self.tol

    @property
    def holds(self):
        # only the sufficient direction is claimed
        return self.original_inside or not self.modified_inside


def box_violation(y, lo, hi):
    '''Per-channel worst excursion of the rows of y outside [lo, hi].'''
    y = np.atleast_2d(np.asarray(y, dtype=float))
    below = np.max(lo - y, axis=0)
    above = np.max(y - hi, axis=0)
    return np.maximum(0.0, np.maximum(below, above))


def nested_invariance(design, box, x, u, tol=1e-9):
    '''Check that samples kept inside the modified set also stay inside the box.

    x and u are the sampled states and the total policy-space inputs.
    '''
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    Y = modified_output(design, x, u)
    lo, hi = design.modified_box(box)
    y = x @ design.model.C_lim.T
    return NestedInvariance(modified_violation=float(np.max(box_violation(Y, lo, hi))),
                            original_violation=float(np.max(box_violation(y, box.y_min, box.y_max))),
                            tol=tol)
