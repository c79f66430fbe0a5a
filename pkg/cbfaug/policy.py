'''
Min-norm CBF augmentation policy

Every function takes a single sample (x of shape (n,), u_bl of shape (m,))
or a batch (x of shape (N, n), u_bl of shape (N, m)).
'''

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from cbfaug.errors import DimensionMismatch, InfeasibleChannel

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConstraintIncrements:
    dH1: np.ndarray
    dH2: np.ndarray


@dataclass(frozen=True, eq=False)
class ActivationState:
    '''delta flags and the selected bound per channel, NaN where no bound is selected.'''
    delta: np.ndarray
    selected_bound: np.ndarray

    @property
    def pattern(self):
        return tuple(int(d) for d in np.atleast_1d(self.delta))


def _check(design, box, x, u_bl):
    x = np.asarray(x, dtype=float)
    u_bl = np.asarray(u_bl, dtype=float)
    if x.shape[-1] != design.n or u_bl.shape[-1] != design.m or box.m != design.m:
        raise DimensionMismatch('expected x[..., {}], u_bl[..., {}] and a {}-channel box, got {}, {} and {}'.format(
            design.n, design.m, design.m, x.shape, u_bl.shape, box.m))
    return x, u_bl


def _warn_infeasible(inc):
    both = (inc.dH1 > 0) & (inc.dH2 > 0)
    if np.any(both):
        channels = np.unique(np.nonzero(np.atleast_2d(both))[1])
        logger.debug('modified box empty on channels %s', channels)
        warnings.warn('min and max modified constraints both violated on channels {}'.format(
            channels.tolist()), InfeasibleChannel, stacklevel=3)
    return both


def increments(design, box, x, u_bl):
    x, u_bl = _check(design, box, x, u_bl)
    f = x @ design.H_x.T + u_bl @ design.H_u.T
    alpha = design.alpha
    return ConstraintIncrements(dH1=alpha * box.y_min - f, dH2=f - alpha * box.y_max)


def pi_star(design, box, x, u_bl):
    inc = increments(design, box, x, u_bl)
    _warn_infeasible(inc)
    rhs = np.maximum(0.0, inc.dH1) - np.maximum(0.0, inc.dH2)
    return design.solve(rhs)


def pi_star_algebraic(design, box, x, u_bl):
    inc = increments(design, box, x, u_bl)
    rhs = 0.5 * ((inc.dH1 + np.abs(inc.dH1)) - (inc.dH2 + np.abs(inc.dH2)))
    return design.solve(rhs)


def total_control(design, box, x, u_bl):
    u_bl = np.asarray(u_bl, dtype=float)
    return u_bl + pi_star(design, box, x, u_bl)


def activation(design, box, x, u_bl):
    inc = increments(design, box, x, u_bl)
    lo = inc.dH1 > 0
    hi = inc.dH2 > 0
    if np.any(_warn_infeasible(inc)):
        logger.debug('selecting y_min on infeasible channels')
    selected = np.where(lo, box.y_min, np.where(hi, box.y_max, np.nan))
    return ActivationState(delta=(lo | hi).astype(int), selected_bound=selected)


def policy_from_activation(design, state, x, u_bl):
    '''Scaled baseline plus CBF feedback plus CBF command, for a frozen activation.

    Returns pi = -H_u^{-1} delta (H_x x + H_u u_bl - alpha_pi y_sel).
    '''
    x = np.asarray(x, dtype=float)
    u_bl = np.asarray(u_bl, dtype=float)
    delta = np.asarray(state.delta, dtype=float)
    y_sel = np.where(delta > 0, np.nan_to_num(state.selected_bound), 0.0)
    f = x @ design.H_x.T + u_bl @ design.H_u.T - design.alpha * y_sel
    return -design.solve(delta * f)


def saturate(u, lo, hi):
    return np.clip(u, lo, hi)
