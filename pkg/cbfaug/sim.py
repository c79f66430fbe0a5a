'''
Fixed-step closed-loop simulation and trajectory checks
'''

import csv
import logging
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np

from cbfaug.design import box_violation, modified_output, nested_invariance
from cbfaug.errors import DimensionMismatch, NonFiniteState
from cbfaug.lti import hurwitz
from cbfaug.policy import activation, increments, pi_star

logger = logging.getLogger(__name__)

SOFT_LIMIT_FRACTION = 0.02
SETTLE_TIME = 5.0
BOUNDARY_TOL = 2.5e-3
APPROACH_FRACTION = 1e-4


@dataclass(frozen=True)
class CommandSignal:
    '''Piecewise-constant command, one schedule of (start time, level) pairs per channel.

    Each channel holds 0 before its first start time.
    '''
    schedules: Tuple[Tuple[Tuple[float, float], ...], ...]

    def __post_init__(self):
        schedules = tuple(tuple((float(t), float(level)) for t, level in channel) for channel in self.schedules)
        for i, channel in enumerate(schedules):
            times = [t for t, _ in channel]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError('channel {} start times must be strictly increasing'.format(i))
            if not all(np.isfinite(level) and np.isfinite(t) for t, level in channel):
                raise ValueError('channel {} schedule must be finite'.format(i))
        object.__setattr__(self, 'schedules', schedules)
        object.__setattr__(self, '_times', [np.array([t for t, _ in c]) for c in schedules])
        object.__setattr__(self, '_levels', [np.array([0.0] + [v for _, v in c]) for c in schedules])

    @classmethod
    def zero(cls, m):
        return cls(((),) * m)

    @property
    def m(self):
        return len(self.schedules)

    @property
    def last_change(self):
        return max([c[-1][0] for c in self.schedules if c] or [0.0])

    def default_horizon(self):
        return self.last_change + SETTLE_TIME

    def at(self, t):
        return np.array([levels[np.searchsorted(times, t, side='right')]
                         for times, levels in zip(self._times, self._levels)])


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    '''xdot = A x + B (u_bl + pi) with u_bl = -K x + F y_cmd.

    plant_input selects the physical plant input from the policy-space
    input, integrators the tracking-error integrator states.
    '''
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    F: np.ndarray
    C_lim: np.ndarray
    C_reg: Optional[np.ndarray]
    D_reg: Optional[np.ndarray]
    plant_input: slice
    integrators: Optional[slice] = None
    design: object = None
    box: object = None
    augment: Optional[Callable] = field(default=None, repr=False)
    saturation: Optional[tuple] = None
    state_names: Tuple[str, ...] = ()
    input_names: Tuple[str, ...] = ()
    lim_names: Tuple[str, ...] = ()

    @property
    def n(self):
        return self.A.shape[0]

    def baseline(self, x, y_cmd):
        return -x @ self.K.T + y_cmd @ self.F.T

    def policy(self, x, u_bl, y_cmd):
        if self.augment is None:
            return np.zeros_like(u_bl)
        return self.augment(x, u_bl, y_cmd)

    def total(self, u_bl, pi):
        u = u_bl + pi
        if self.saturation is not None:
            lo, hi = self.saturation
            u = u.copy()
            u[..., self.plant_input] = np.clip(u[..., self.plant_input], lo, hi)
        return u

    def derivative(self, t, x, command):
        y_cmd = command.at(t)
        u_bl = self.baseline(x, y_cmd)
        return self.A @ x + self.B @ self.total(u_bl, self.policy(x, u_bl, y_cmd))


def _cbf_augment(design, box, x, u_bl, y_cmd):
    return pi_star(design, box, x, u_bl)


def proportional_loop(model, baseline, design=None, box=None, augmented=True, saturation=None):
    '''Plant under u_bl = -K_x x + K_ff y_cmd, optionally with the CBF policy.'''
    m = model.m
    augment = partial(_cbf_augment, design, box) if augmented and design is not None else None
    K_ff = baseline.K_ff if baseline.K_ff is not None else np.zeros((m, m))
    return ClosedLoop(A=model.A, B=model.B, K=baseline.K_x, F=K_ff, C_lim=model.C_lim,
                      C_reg=model.C_reg, D_reg=model.D_reg, plant_input=slice(0, m),
                      design=design, box=box, augment=augment, saturation=saturation,
                      state_names=model.state_names, input_names=model.input_names,
                      lim_names=model.lim_names)


def servo_loop(ext, augmented=True, saturation=None):
    '''Extended PI servo with u_tilde_bl = (-y_cmd; -K_x x).'''
    m = ext.m
    K = np.vstack([np.zeros((m, ext.n)), ext.baseline.K_x])
    F = np.vstack([-np.eye(m), np.zeros((m, m))])
    C_reg = np.hstack([np.zeros((m, m)), ext.plant.C_reg])
    augment = partial(_cbf_augment, ext.design, ext.box) if augmented else None
    return ClosedLoop(A=ext.A_ext, B=ext.B_ext, K=K, F=F, C_lim=ext.C_lim_ext,
                      C_reg=C_reg, D_reg=ext.plant.D_reg, plant_input=slice(m, 2 * m),
                      integrators=slice(0, m), design=ext.design, box=ext.box, augment=augment,
                      saturation=saturation, state_names=ext.model.state_names,
                      input_names=ext.plant.input_names, lim_names=ext.model.lim_names)


def projection_augmentation(a, b, k_x, k_ff, x_min, x_max, proj_tol, x, x_cmd):
    '''Scalar projection-operator augmentation b^{-1} (Proj(x, xdot_bl) - xdot_bl).'''
    if not proj_tol > 0:
        raise ValueError('proj_tol must be positive')
    if not x_min < x_max:
        raise ValueError('x_min must be below x_max')
    xdot_bl = (a - b * k_x) * x + b * k_ff * x_cmd
    if x > x_max - proj_tol and xdot_bl > 0:
        return ((x_max - x) / proj_tol - 1.0) * xdot_bl / b
    if x < x_min + proj_tol and xdot_bl < 0:
        return ((x - x_min) / proj_tol - 1.0) * xdot_bl / b
    return 0.0


def _projection_augment(a, b, k_x, k_ff, x_min, x_max, proj_tol, x, u_bl, y_cmd):
    return np.array([projection_augmentation(a, b, k_x, k_ff, x_min, x_max, proj_tol, x[0], y_cmd[0])])


def projection_loop(model, baseline, box, proj_tol):
    '''Scalar plant with the projection operator in place of the CBF policy.'''
    if model.n != 1 or model.m != 1:
        raise DimensionMismatch('the projection comparator is defined for scalar plants only')
    loop = proportional_loop(model, baseline, augmented=False)
    augment = partial(_projection_augment, model.A[0, 0], model.B[0, 0], baseline.K_x[0, 0],
                      baseline.K_ff[0, 0], box.y_min[0], box.y_max[0], proj_tol)
    return replace(loop, augment=augment, box=box)


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y_cmd: np.ndarray
    u_bl: np.ndarray
    pi: np.ndarray
    u: np.ndarray
    y_lim: np.ndarray
    y_reg: Optional[np.ndarray]
    delta: Optional[np.ndarray]
    e_yI: Optional[np.ndarray] = None
    state_names: Tuple[str, ...] = ()
    input_names: Tuple[str, ...] = ()
    lim_names: Tuple[str, ...] = ()

    def __len__(self):
        return self.t.shape[0]


def _record(loop, t, x, command):
    y_cmd = np.array([command.at(tk) for tk in t])
    u_bl = loop.baseline(x, y_cmd)
    pi = np.array([loop.policy(xk, uk, ck) for xk, uk, ck in zip(x, u_bl, y_cmd)])
    u_tilde = loop.total(u_bl, pi)
    u = u_tilde[:, loop.plant_input]
    y_reg = None
    if loop.C_reg is not None:
        y_reg = x @ loop.C_reg.T + u @ loop.D_reg.T
    delta = None
    if loop.design is not None and loop.box is not None and loop.box.m == loop.design.m:
        delta = activation(loop.design, loop.box, x, u_bl).delta
    e_yI = x[:, loop.integrators] if loop.integrators is not None else None
    return Trajectory(t=t, x=x, y_cmd=y_cmd, u_bl=u_bl, pi=pi, u=u, y_lim=x @ loop.C_lim.T,
                      y_reg=y_reg, delta=delta, e_yI=e_yI, state_names=loop.state_names,
                      input_names=loop.input_names, lim_names=loop.lim_names)


def simulate(loop, command, x0, dt=1e-3, T=None):
    '''Classical RK4 with the policy re-evaluated at every stage.'''
    if T is None:
        T = command.default_horizon()
    if not dt > 0 or T < dt:
        raise ValueError('need dt > 0 and T >= dt, got dt = {} and T = {}'.format(dt, T))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (loop.n,):
        raise DimensionMismatch('x0 must have {} entries'.format(loop.n))
    if loop.box is not None and loop.augment is not None:
        if not loop.box.contains(loop.C_lim @ x0, strict=True):
            raise ValueError('x0 must start strictly inside the constraint box')

    steps = int(round(T / dt))
    t = np.arange(steps + 1) * dt
    x = np.empty((steps + 1, loop.n))
    x[0] = x0
    f = loop.derivative
    for k in range(steps):
        tk, w = t[k], x[k]
        k1 = dt * f(tk, w, command)
        k2 = dt * f(tk + dt / 2, w + k1 / 2, command)
        k3 = dt * f(tk + dt / 2, w + k2 / 2, command)
        k4 = dt * f(tk + dt, w + k3, command)
        x[k + 1] = w + (k1 + 2 * k2 + 2 * k3 + k4) / 6
        if not np.all(np.isfinite(x[k + 1])):
            raise NonFiniteState(k)
    logger.debug('simulated %d steps of %.3g s', steps, dt)
    return _record(loop, t, x, command)


def replay_controls(loop, traj):
    '''Largest difference between the logged control and the policy recomputed from (x, u_bl).'''
    pi = np.array([loop.policy(xk, uk, ck) for xk, uk, ck in zip(traj.x, traj.u_bl, traj.y_cmd)])
    u = loop.total(traj.u_bl, pi)[:, loop.plant_input]
    return float(np.max(np.abs(u - traj.u))) if len(traj) else 0.0


@dataclass(frozen=True, eq=False)
class InvarianceReport:
    channels: Tuple[str, ...]
    violation: np.ndarray
    first_violation: Tuple[Optional[float], ...]
    modified_violation: Optional[np.ndarray]
    tol: np.ndarray
    nested_holds: Optional[bool] = None

    @property
    def ok(self):
        return bool(np.all(self.violation <= self.tol))

    def to_dict(self):
        return {
            'channels': list(self.channels),
            'violation': self.violation.tolist(),
            'first_violation': list(self.first_violation),
            'modified_violation': None if self.modified_violation is None else self.modified_violation.tolist(),
            'tol': self.tol.tolist(),
            'nested_holds': self.nested_holds,
            'ok': self.ok,
        }


def soft_tolerance(box, fraction=SOFT_LIMIT_FRACTION):
    return fraction * box.span


def invariance_report(traj, box, design=None, tol=None):
    tol = soft_tolerance(box) if tol is None else np.broadcast_to(np.asarray(tol, dtype=float), (box.m,))
    y = traj.y_lim
    excess = np.maximum(box.y_min - y, y - box.y_max)
    violation = np.maximum(0.0, np.max(excess, axis=0))
    first = []
    for i in range(box.m):
        hits = np.nonzero(excess[:, i] > tol[i])[0]
        first.append(float(traj.t[hits[0]]) if hits.size else None)

    modified, nested = None, None
    if design is not None:
        u_tilde = traj.u_bl + traj.pi
        lo, hi = design.modified_box(box)
        modified = box_violation(modified_output(design, traj.x, u_tilde), lo, hi)
        nested = nested_invariance(design, box, traj.x, u_tilde, tol=float(np.min(tol))).holds
    report = InvarianceReport(channels=tuple(traj.lim_names) or tuple(range(box.m)), violation=violation,
                              first_violation=tuple(first), modified_violation=modified,
                              tol=np.array(tol, dtype=float), nested_holds=nested)
    if not report.ok:
        logger.warning('box violated beyond tolerance: %s', violation)
    return report


def input_limit_report(traj, input_box, tol=None):
    '''Total plant input u against the baseline input limits.'''
    tol = soft_tolerance(input_box) if tol is None else np.broadcast_to(np.asarray(tol, dtype=float), (input_box.m,))
    excess = np.maximum(input_box.y_min - traj.u, traj.u - input_box.y_max)
    violation = np.maximum(0.0, np.max(excess, axis=0))
    first = []
    for i in range(input_box.m):
        hits = np.nonzero(excess[:, i] > tol[i])[0]
        first.append(float(traj.t[hits[0]]) if hits.size else None)
    return InvarianceReport(channels=tuple(traj.input_names) or tuple(range(input_box.m)),
                            violation=violation, first_violation=tuple(first),
                            modified_violation=None, tol=np.array(tol, dtype=float))


@dataclass(frozen=True)
class BoundaryResidual:
    residual: float
    limit: float

    @property
    def ok(self):
        return bool(self.residual <= self.limit)

    def to_dict(self):
        return {'residual': self.residual, 'limit': self.limit, 'ok': self.ok}


def boundary_dynamics_check(traj, design, box, channel, tol=BOUNDARY_TOL):
    '''Max of |ydot - lambda (y - y_bound)| where the channel is pinned to a bound.

    Needs a first-order filter on the channel. Only samples whose neighbours
    are active on the same bound are used, ydot comes from central differences.
    The residual passes when it is at most tol * (1 + |lambda| * span).
    '''
    if design.r[channel] != 1:
        raise ValueError('boundary dynamics check needs relative degree 1 on channel {}'.format(channel))
    lam = design.bank.roots[channel][0]
    limit = float(tol * (1.0 + abs(lam) * box.span[channel]))
    if traj.delta is None:
        return BoundaryResidual(residual=0.0, limit=limit)
    y = traj.y_lim[:, channel]
    ydot = np.gradient(y, traj.t)
    inc = increments(design, box, traj.x, traj.u_bl)
    lo = inc.dH1[:, channel] > 0
    hi = (inc.dH2[:, channel] > 0) & ~lo
    worst = 0.0
    for bound, active in ((box.y_min[channel], lo), (box.y_max[channel], hi)):
        pinned = np.zeros_like(active)
        pinned[1:-1] = active[:-2] & active[1:-1] & active[2:]
        if np.any(pinned):
            residual = np.abs(ydot[pinned] - lam * (y[pinned] - bound))
            worst = max(worst, float(np.max(residual)))
    if worst > limit:
        logger.warning('channel %d leaves its boundary dynamics by %.3e (limit %.3e)', channel, worst, limit)
    return BoundaryResidual(residual=worst, limit=limit)


def approach_time(traj, box, fraction=APPROACH_FRACTION):
    '''First time a limited output comes within fraction * span of a bound, inf if it never does.'''
    gap = np.minimum(traj.y_lim - box.y_min, box.y_max - traj.y_lim)
    hits = np.nonzero(np.any(gap <= fraction * box.span, axis=1))[0]
    return float(traj.t[hits[0]]) if hits.size else np.inf


def control_rates(traj):
    '''Finite-difference rates of the plant input.'''
    return np.gradient(traj.u, traj.t, axis=0)


def integrator_growth(traj, tail=0.25):
    '''Peak integrator norm over the final tail against the peak over the rest.'''
    if traj.e_yI is None:
        return 0.0, 0.0
    norms = np.linalg.norm(traj.e_yI, axis=1)
    split = int(len(norms) * (1.0 - tail))
    return float(np.max(norms[split:])), float(np.max(norms[:max(split, 1)]))


def integrator_bound(traj, ext):
    '''Bound on max ||e_yI|| from the anti-windup damping block -K_I^{-1} Lambda_u K_I.

    The integrators follow edot = (y_reg - y_cmd) + v. With the damping D
    engaged they decay like K_I^{-1} exp(-D t) K_I, otherwise like the
    baseline loop, so ||e_yI|| stays below
    cond(K_I) (||e_yI(0)|| + max ||y_reg - y_cmd|| / mu) with mu the slower
    of the smallest damping eigenvalue and the baseline decay rate.
    '''
    if traj.e_yI is None or traj.y_reg is None:
        raise ValueError('the trajectory carries no integrator states')
    m = ext.m
    damping_rate = float(np.min(np.linalg.eigvals(ext.K_CBF_ext[:m, :m]).real))
    decay_rate = -hurwitz(ext.A_ext - ext.B_ext[:, m:] @ ext.baseline.K_x)[1]
    rate = min(damping_rate, decay_rate)
    if not rate > 0:
        logger.warning('no damping on the integrators (rate %.3e), bound is infinite', rate)
        return np.inf
    forcing = float(np.max(np.linalg.norm(traj.y_reg - traj.y_cmd, axis=1)))
    e0 = float(np.linalg.norm(traj.e_yI[0]))
    return float(np.linalg.cond(ext.baseline.K_I) * (e0 + forcing / rate))


def write_trajectory_csv(traj, path):
    header = ['t'] + list(traj.state_names) + ['u_{}'.format(name) for name in traj.input_names] \
        + list(traj.lim_names)
    columns = [traj.t[:, None], traj.x, traj.u, traj.y_lim]
    if traj.delta is not None:
        header += ['delta_{}'.format(name) for name in traj.lim_names]
        columns.append(traj.delta)
    rows = np.hstack(columns)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    return path
