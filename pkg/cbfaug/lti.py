import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from cbfaug.errors import (DimensionMismatch, EigenSolverError, NoRelativeDegree,
                           NotControllable, SingularHu)

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-9
HURWITZ_TOL = 1e-9
SINGULAR_COND = 1e12


def frozen_array(a, ndim=2):
    a = np.array(a, dtype=float)
    if a.ndim == 0 or (ndim == 2 and a.ndim == 1):
        a = a.reshape(1, -1) if ndim == 2 else a.reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    '''LTI plant xdot = A x + B u with a limited output y_lim = C_lim x.

    The regulated output y_reg = C_reg x + D_reg u is optional and only
    needed by servo designs.
    '''
    A: np.ndarray
    B: np.ndarray
    C_lim: np.ndarray
    C_reg: Optional[np.ndarray] = None
    D_reg: Optional[np.ndarray] = None
    state_names: Tuple[str, ...] = field(default=())
    input_names: Tuple[str, ...] = field(default=())
    lim_names: Tuple[str, ...] = field(default=())
    reg_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ('A', 'B', 'C_lim', 'C_reg', 'D_reg'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, frozen_array(value))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch('A must be square, got {}'.format(self.A.shape))
        if self.B.shape[0] != n:
            raise DimensionMismatch('B must have {} rows, got {}'.format(n, self.B.shape))
        m = self.B.shape[1]
        if self.C_lim.shape != (m, n):
            raise DimensionMismatch('C_lim must be {}x{}, got {}'.format(m, n, self.C_lim.shape))
        if (self.C_reg is None) != (self.D_reg is None):
            raise DimensionMismatch('C_reg and D_reg must be given together')
        if self.C_reg is not None:
            if self.C_reg.shape != (m, n) or self.D_reg.shape != (m, m):
                raise DimensionMismatch('regulated output maps must be {}x{} and {}x{}'.format(m, n, m, m))
        defaults = {
            'state_names': ['x{}'.format(i + 1) for i in range(n)],
            'input_names': ['u{}'.format(i + 1) for i in range(m)],
            'lim_names': ['ylim{}'.format(i + 1) for i in range(m)],
            'reg_names': ['yreg{}'.format(i + 1) for i in range(m)],
        }
        for name, default in defaults.items():
            names = tuple(getattr(self, name)) or tuple(default)
            if len(names) != len(default):
                raise DimensionMismatch('{} must have {} entries'.format(name, len(default)))
            object.__setattr__(self, name, names)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def channel_index(self, channel):
        '''Accepts an integer index or a limited-output name.'''
        if isinstance(channel, str):
            if channel not in self.lim_names:
                raise IndexError('unknown limited output {!r}'.format(channel))
            return self.lim_names.index(channel)
        if not 0 <= channel < self.m:
            raise IndexError('channel {} out of range for m = {}'.format(channel, self.m))
        return int(channel)


@dataclass(frozen=True)
class RelativeDegreeVector:
    r: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'r', tuple(int(v) for v in self.r))
        if any(v < 1 for v in self.r):
            raise ValueError('relative degrees must be >= 1, got {}'.format(self.r))

    def __len__(self):
        return len(self.r)

    def __iter__(self):
        return iter(self.r)

    def __getitem__(self, i):
        return self.r[i]

    def __str__(self):
        return '({})'.format(' '.join(str(v) for v in self.r))


def markov_row(model, channel, power):
    i = model.channel_index(channel)
    if not 0 <= power < model.n:
        raise IndexError('power {} out of range for n = {}'.format(power, model.n))
    return model.C_lim[i] @ np.linalg.matrix_power(model.A, power) @ model.B


def relative_degree(model, zero_tol=ZERO_TOL):
    if zero_tol <= 0:
        raise ValueError('zero_tol must be positive')
    norm_c = np.linalg.norm(model.C_lim, 2)
    norm_b = np.linalg.norm(model.B, 2)
    grow = max(1.0, np.linalg.norm(model.A, 2))

    r = []
    for i in range(model.m):
        row = model.C_lim[i]
        for k in range(1, model.n + 1):
            markov = row @ model.B
            scale = norm_c * norm_b * grow ** (k - 1)
            if np.linalg.norm(markov) > zero_tol * scale:
                r.append(k)
                break
            row = row @ model.A
        else:
            raise NoRelativeDegree(i)

    r = RelativeDegreeVector(r)
    H_u = control_sensitivity(model, r)
    cond = np.linalg.cond(H_u)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularHu(cond)
    logger.debug('relative degree %s, cond(H_u) = %.3e', r, cond)
    return r


def control_sensitivity(model, r):
    '''Stack the first non-zero Markov rows (C_lim)_i A^(r_i - 1) B.'''
    return np.vstack([model.C_lim[i] @ np.linalg.matrix_power(model.A, r[i] - 1) @ model.B
                      for i in range(len(r))])


def matrix_polynomial(A, roots):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    out = np.eye(n)
    for lam in roots:
        if np.iscomplexobj(lam) or not lam < 0:
            raise ValueError('roots must be strictly negative reals, got {}'.format(lam))
        out = out @ (A - lam * np.eye(n))
    return out


def polynomial_coefficients(roots):
    '''Coefficients c_0 .. c_r of prod_j (s - lambda_j), lowest order first.'''
    return np.poly(np.asarray(roots, dtype=float))[::-1] if len(roots) else np.ones(1)


def matrix_polynomial_coeffs(A, coeffs):
    A = np.asarray(A, dtype=float)
    out = np.zeros_like(A)
    power = np.eye(A.shape[0])
    for c in coeffs:
        out = out + c * power
        power = power @ A
    return out


def hurwitz(M, margin_tol=HURWITZ_TOL):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch('hurwitz needs a square matrix, got {}'.format(M.shape))
    try:
        eig = la.eigvals(M)
    except (la.LinAlgError, ValueError) as exc:
        raise EigenSolverError(str(exc))
    if not np.all(np.isfinite(eig)):
        raise EigenSolverError('eigen-solver returned non-finite eigenvalues')
    abscissa = float(np.max(eig.real))
    return abscissa < -margin_tol, abscissa


def controllability_rank(model):
    n = model.n
    blocks = [model.B]
    for _ in range(n - 1):
        blocks.append(model.A @ blocks[-1])
    ctrb = np.hstack(blocks)
    sv = la.svdvals(ctrb)
    tol = n * np.finfo(float).eps * sv[0] if sv.size else 0.0
    return int(np.sum(sv > tol))


def require_controllable(model):
    rank = controllability_rank(model)
    if rank < model.n:
        raise NotControllable('(A, B) controllability rank {} < n = {}'.format(rank, model.n))
