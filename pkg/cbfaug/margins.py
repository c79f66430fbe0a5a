'''
Loop gains at the plant input and relative-stability margins
'''

import csv
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg as la
from scipy.optimize import bisect
from tqdm import tqdm

from cbfaug.errors import DimensionMismatch, EnumerationCapExceeded, ResolventSingular
from cbfaug.lti import frozen_array, hurwitz
from cbfaug.servo import ExtendedServoDesign

logger = logging.getLogger(__name__)

REFINE_STEPS = 20
ENUMERATION_CAP = 8
RESOLVENT_COND = 1e12


def default_grid(w_min=1e-3, w_max=1e3, points=400):
    return np.logspace(np.log10(w_min), np.log10(w_max), points)


@dataclass(frozen=True, eq=False)
class LoopGainModel:
    '''Loop broken at the plant input: u_out = -K_eff (sI - A)^{-1} B u_in.'''
    A: np.ndarray
    B: np.ndarray
    K_eff: np.ndarray
    pattern: Tuple[int, ...] = ()

    def __post_init__(self):
        for name in ('A', 'B', 'K_eff'):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        if not np.all(np.isfinite(self.K_eff)):
            raise ValueError('K_eff must be finite')
        if self.K_eff.shape != (self.B.shape[1], self.A.shape[0]):
            raise DimensionMismatch('K_eff must be {}x{}, got {}'.format(
                self.B.shape[1], self.A.shape[0], self.K_eff.shape))
        object.__setattr__(self, 'pattern', tuple(int(p) for p in self.pattern))

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def label(self):
        return ''.join(str(p) for p in self.pattern)

    def channel_loop(self, i):
        '''(A, b, k) of channel i with the remaining loops closed.'''
        others = [j for j in range(self.m) if j != i]
        A_i = self.A - self.B[:, others] @ self.K_eff[others]
        return A_i, self.B[:, i], self.K_eff[i]


def _resolvent_solve(A, B, omega):
    R = 1j * omega * np.eye(A.shape[0]) - A
    if np.linalg.cond(R) > RESOLVENT_COND:
        raise ResolventSingular(omega)
    return la.solve(R, B)


def loop_gain_at(model, omega):
    return model.K_eff @ _resolvent_solve(model.A, model.B, omega)


def _extended_feedback(design, K_x, pattern):
    m = design.m
    pattern = np.asarray(pattern, dtype=float)
    if pattern.shape != (2 * m,):
        raise DimensionMismatch('extended pattern must have {} entries, got {}'.format(2 * m, pattern.shape))
    Hd = design.H_u_tilde_inv * pattern
    K_bl = np.vstack([np.zeros((m, design.n)), K_x])
    return (np.eye(2 * m) - Hd @ design.H_u_tilde) @ K_bl + Hd @ design.H_x_ext


def effective_gain(design, baseline, pattern):
    '''(I - H_u^{-1} delta H_u) K_x + H_u^{-1} delta H_x for a frozen activation pattern.

    For the extended servo the plant-input rows of the stacked feedback are
    returned, with the anti-windup loops closed.
    '''
    if isinstance(design, ExtendedServoDesign):
        return _extended_feedback(design, baseline.K_x, pattern)[design.m:]
    pattern = np.asarray(pattern, dtype=float)
    if pattern.shape != (design.m,):
        raise DimensionMismatch('pattern must have {} entries, got {}'.format(design.m, pattern.shape))
    Hd = design.H_u_inv * pattern
    return (np.eye(design.m) - Hd @ design.H_u) @ baseline.K_x + Hd @ design.H_x


def loop_gain_model(design, baseline, pattern):
    if isinstance(design, ExtendedServoDesign):
        m = design.m
        M = _extended_feedback(design, baseline.K_x, pattern)
        A = design.A_ext - design.B_ext[:, :m] @ M[:m]
        return LoopGainModel(A=A, B=design.B_ext[:, m:], K_eff=M[m:], pattern=pattern)
    return LoopGainModel(A=design.model.A, B=design.model.B,
                         K_eff=effective_gain(design, baseline, pattern), pattern=pattern)


@dataclass(frozen=True, eq=False)
class MarginReport:
    pattern: Tuple[int, ...]
    stable: bool
    abscissa: float
    gm_db: np.ndarray
    gm_freq: np.ndarray
    pm_deg: np.ndarray
    pm_freq: np.ndarray
    disk: float
    disk_freq: float
    mimo_gm_db: float
    mimo_pm_deg: float
    notes: Tuple[str, ...] = ()

    @property
    def label(self):
        return ''.join(str(p) for p in self.pattern)

    @property
    def min_gm_db(self):
        return float(np.min(self.gm_db))

    @property
    def min_pm_deg(self):
        return float(np.min(self.pm_deg))

    @property
    def positive(self):
        values = np.concatenate([self.gm_db, self.pm_deg, [self.mimo_gm_db, self.mimo_pm_deg]])
        return bool(self.stable and np.all(values > 0))


def _crossings(values):
    return np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)[0]


def _siso_margins(A, b, k, grid):
    def L(w):
        return complex(k @ _resolvent_solve(A, b, w))

    response = np.array([L(w) for w in grid])
    notes = []

    pm, pm_freq = np.inf, np.nan
    for j in _crossings(np.abs(response) - 1.0):
        w = bisect(lambda w: abs(L(w)) - 1.0, grid[j], grid[j + 1], maxiter=REFINE_STEPS, disp=False)
        candidate = 180.0 - abs(np.degrees(np.angle(L(w))))
        if candidate < pm:
            pm, pm_freq = candidate, w
    if abs(response[-1]) >= 1.0:
        notes.append('gain crossover above {:.3g} rad/s'.format(grid[-1]))

    gm, gm_freq = np.inf, np.nan
    for j in _crossings(response.imag):
        w = bisect(lambda w: L(w).imag, grid[j], grid[j + 1], maxiter=REFINE_STEPS, disp=False)
        value = L(w)
        if value.real < 0:
            candidate = abs(20.0 * np.log10(abs(value)))
            if candidate < gm:
                gm, gm_freq = candidate, w
    if np.linalg.cond(A) < RESOLVENT_COND:
        dc = float(k @ la.solve(-A, b))
        if dc < 0 and abs(20.0 * np.log10(-dc)) < gm:
            gm, gm_freq = abs(20.0 * np.log10(-dc)), 0.0
    return gm, gm_freq, pm, pm_freq, notes


def disk_margin(d):
    '''Symmetric gain (dB) and phase (deg) margins from d = min sigma_min(I + L).'''
    gm = 20.0 * np.log10((1.0 + d) / (1.0 - d)) if d < 1.0 else np.inf
    pm = np.degrees(2.0 * np.arcsin(min(d / 2.0, 1.0)))
    return gm, pm


def margins(model, grid=None):
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    m = model.m
    stable, abscissa = hurwitz(model.A - model.B @ model.K_eff)
    if not stable:
        nan = np.full(m, np.nan)
        return MarginReport(pattern=model.pattern, stable=False, abscissa=abscissa, gm_db=nan, gm_freq=nan,
                            pm_deg=nan, pm_freq=nan, disk=np.nan, disk_freq=np.nan, mimo_gm_db=np.nan,
                            mimo_pm_deg=np.nan, notes=('unstable nominal',))

    gm_db, gm_freq, pm_deg, pm_freq, notes = [], [], [], [], []
    for i in range(m):
        gm, wg, pm, wp, channel_notes = _siso_margins(*model.channel_loop(i), grid)
        gm_db.append(gm)
        gm_freq.append(wg)
        pm_deg.append(pm)
        pm_freq.append(wp)
        notes += ['channel {}: {}'.format(i, note) for note in channel_notes]

    sigma = np.array([la.svdvals(np.eye(m) + loop_gain_at(model, w))[-1] for w in grid])
    j = int(np.argmin(sigma))
    mimo_gm, mimo_pm = disk_margin(sigma[j])
    return MarginReport(pattern=model.pattern, stable=True, abscissa=abscissa,
                        gm_db=np.array(gm_db), gm_freq=np.array(gm_freq), pm_deg=np.array(pm_deg),
                        pm_freq=np.array(pm_freq), disk=float(sigma[j]), disk_freq=float(grid[j]),
                        mimo_gm_db=mimo_gm, mimo_pm_deg=mimo_pm, notes=tuple(notes))


def activation_sweep(design, baseline, grid=None, progress=False):
    '''Margins of every frozen activation pattern, the pattern read as a binary counter.'''
    channels = 2 * design.m if isinstance(design, ExtendedServoDesign) else design.m
    if design.m > ENUMERATION_CAP:
        raise EnumerationCapExceeded('m = {} plant inputs give 2^{} patterns, the cap is m = {}'.format(
            design.m, channels, ENUMERATION_CAP))
    entries = []
    for k in tqdm(range(2 ** channels), desc='activation patterns', disable=not progress):
        pattern = tuple((k >> i) & 1 for i in range(channels))
        report = margins(loop_gain_model(design, baseline, pattern), grid)
        if not report.stable:
            logger.warning('pattern %s gives an unstable frozen loop', report.label)
        entries.append((pattern, report, report.stable))
    return entries


def bode_data(model, grid=None):
    '''Loop-at-a-time magnitude (dB) and unwrapped phase (deg) per channel.'''
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    response = np.empty((grid.size, model.m), dtype=complex)
    for i in range(model.m):
        A, b, k = model.channel_loop(i)
        response[:, i] = [k @ _resolvent_solve(A, b, w) for w in grid]
    mag_db = 20.0 * np.log10(np.maximum(np.abs(response), np.finfo(float).tiny))
    phase_deg = np.degrees(np.unwrap(np.angle(response), axis=0))
    return grid, mag_db, phase_deg


def write_margin_csv(entries, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['pattern', 'gm_db', 'pm_deg', 'mimo_gm_db', 'mimo_pm_deg', 'hurwitz'])
        for pattern, report, stable in entries:
            writer.writerow([''.join(str(p) for p in pattern), repr(report.min_gm_db), repr(report.min_pm_deg),
                             repr(float(report.mimo_gm_db)), repr(float(report.mimo_pm_deg)), int(stable)])
    return path


def write_bode_csv(grid, mag_db, phase_deg, names, path):
    header = ['omega'] + ['mag_db_{}'.format(n) for n in names] + ['phase_deg_{}'.format(n) for n in names]
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in np.hstack([grid[:, None], mag_db, phase_deg]):
            writer.writerow([repr(float(v)) for v in row])
    return path
