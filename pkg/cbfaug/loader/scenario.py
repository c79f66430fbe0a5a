'''
Validated scenario description and unit handling
'''

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from cbfaug.design import ConstraintBox, PolynomialBank, bank_from_alpha
from cbfaug.errors import ConfigError
from cbfaug.loader.parse_config import parse_config, write_config
from cbfaug.lti import StateSpaceModel
from cbfaug.sim import CommandSignal

logger = logging.getLogger(__name__)

GRAVITY = {'si': 9.80665, 'ft-lb': 32.174}
ACCELERATION_UNITS = {'si': 'm/s2', 'ft-lb': 'ft/s2'}
ANGLE_UNITS = {'none': 1.0, 'rad': 1.0, 'rad/s': 1.0, 'deg': math.pi / 180.0, 'deg/s': math.pi / 180.0,
               'g': 1.0}
KINDS = ('proportional', 'servo')
BASELINE_FORMS = ('gains', 'lqr')


def unit_factor(unit, unit_set='si'):
    '''Multiplier from the declared unit to the internal (radian, g) unit.'''
    if unit in ANGLE_UNITS:
        return ANGLE_UNITS[unit]
    if unit in ('m/s2', 'ft/s2'):
        if ACCELERATION_UNITS.get(unit_set) != unit:
            raise ValueError('acceleration unit {} does not belong to the {} unit set'.format(unit, unit_set))
        return 1.0 / GRAVITY[unit_set]
    raise ValueError('unknown unit {!r}'.format(unit))


def to_internal(value, unit, unit_set='si'):
    return np.asarray(value, dtype=float) * unit_factor(unit, unit_set)


def from_internal(value, unit, unit_set='si'):
    return np.asarray(value, dtype=float) / unit_factor(unit, unit_set)


def _rows(a):
    return tuple(tuple(float(v) for v in row) for row in np.atleast_2d(a))


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    description: str
    kind: str
    unit_set: str
    state_names: Tuple[str, ...]
    input_names: Tuple[str, ...]
    reg_names: Tuple[str, ...]
    lim_names: Tuple[str, ...]
    A: Tuple[Tuple[float, ...], ...]
    B: Tuple[Tuple[float, ...], ...]
    C_lim: Tuple[Tuple[float, ...], ...]
    C_reg: Tuple[Tuple[float, ...], ...]
    D_reg: Tuple[Tuple[float, ...], ...]
    output_min: Tuple[float, ...]
    output_max: Tuple[float, ...]
    output_units: Tuple[str, ...]
    input_min: Tuple[float, ...]
    input_max: Tuple[float, ...]
    input_units: Tuple[str, ...]
    input_guard: float
    roots: Tuple[Tuple[float, ...], ...]
    alpha: Tuple[float, ...]
    zero_tol: float
    baseline_form: str
    K_x: Tuple[Tuple[float, ...], ...]
    Q: Tuple[float, ...]
    R: Tuple[float, ...]
    command_units: Tuple[str, ...]
    commands: Tuple[Tuple[Tuple[float, float], ...], ...]
    dt: float
    horizon: Optional[float]
    x0: Tuple[float, ...]
    proj_tol: float
    baseline_only: bool
    saturate: bool
    margins: bool
    w_min: float
    w_max: float
    points: int

    @property
    def is_servo(self):
        return self.kind == 'servo'

    @property
    def m(self):
        return len(self.input_names)

    def plant(self):
        return StateSpaceModel(A=np.array(self.A), B=np.array(self.B), C_lim=np.array(self.C_lim),
                               C_reg=np.array(self.C_reg), D_reg=np.array(self.D_reg),
                               state_names=self.state_names, input_names=self.input_names,
                               lim_names=self.lim_names, reg_names=self.reg_names)

    def output_box(self):
        lo = [to_internal(v, u, self.unit_set) for v, u in zip(self.output_min, self.output_units)]
        hi = [to_internal(v, u, self.unit_set) for v, u in zip(self.output_max, self.output_units)]
        return ConstraintBox(np.array(lo, dtype=float), np.array(hi, dtype=float))

    def input_box(self):
        lo = [to_internal(v, u, self.unit_set) for v, u in zip(self.input_min, self.input_units)]
        hi = [to_internal(v, u, self.unit_set) for v, u in zip(self.input_max, self.input_units)]
        return ConstraintBox(np.array(lo, dtype=float), np.array(hi, dtype=float))

    def guarded_input_box(self):
        '''Input box the baseline command is held to, pulled in by input_guard * span.'''
        return self.input_box().shrink(self.input_guard)

    def command(self):
        return CommandSignal(tuple(
            tuple((t, float(to_internal(level, unit, self.unit_set))) for t, level in schedule)
            for schedule, unit in zip(self.commands, self.command_units)))

    def bank(self, r):
        '''Filter roots over the policy channels, from explicit roots or alpha targets.'''
        if self.roots:
            return PolynomialBank(self.roots)
        return bank_from_alpha(self.alpha, r)

    def initial_state(self, n):
        return np.array(self.x0, dtype=float) if self.x0 else np.zeros(n)

    def sections(self):
        def matrix(key, value):
            a = np.array(value, dtype=float)
            return {key: [float(v) for v in a.ravel()], key + '_shape': list(a.shape)}

        plant = {'state_names': list(self.state_names), 'input_names': list(self.input_names),
                 'reg_names': list(self.reg_names), 'lim_names': list(self.lim_names)}
        for key, value in (('a', self.A), ('b', self.B), ('c_lim', self.C_lim),
                           ('c_reg', self.C_reg), ('d_reg', self.D_reg)):
            plant.update(matrix(key, value))
        limits = {'output_min': list(self.output_min), 'output_max': list(self.output_max),
                  'output_units': list(self.output_units)}
        if self.input_units:
            limits.update({'input_min': list(self.input_min), 'input_max': list(self.input_max),
                           'input_units': list(self.input_units), 'input_guard': self.input_guard})
        cbf = {'zero_tol': self.zero_tol}
        if self.roots:
            cbf['roots'] = [list(r) for r in self.roots]
        else:
            cbf['alpha'] = list(self.alpha)
        baseline = {'form': self.baseline_form}
        if self.baseline_form == 'gains':
            baseline.update(matrix('k_x', self.K_x))
        else:
            baseline.update({'q': list(self.Q), 'r': list(self.R)})
        command = {'units': list(self.command_units)}
        for name, schedule in zip(self.reg_names, self.commands):
            command[name.lower()] = [[t, level] for t, level in schedule]
        simulation = {'dt': self.dt, 'horizon': self.horizon, 'x0': list(self.x0) or None,
                      'proj_tol': self.proj_tol, 'baseline_only': self.baseline_only,
                      'saturate': self.saturate}
        analysis = {'margins': self.margins, 'w_min': self.w_min, 'w_max': self.w_max, 'points': self.points}
        return {'scenario': {'name': self.name, 'description': self.description, 'kind': self.kind,
                             'unit_set': self.unit_set},
                'plant': plant, 'limits': limits, 'cbf': cbf, 'baseline': baseline, 'command': command,
                'simulation': simulation, 'analysis': analysis}


class _Reader(object):
    def __init__(self, sections):
        self.sections = sections

    def get(self, section, key, default=KeyError):
        field = '{}.{}'.format(section, key)
        value = self.sections.get(section, {}).get(key)
        if value is None:
            if default is KeyError:
                raise ConfigError(field, 'missing')
            return default
        return value

    def text(self, section, key, default=KeyError, choices=None):
        value = self.get(section, key, default)
        if not isinstance(value, str):
            raise ConfigError('{}.{}'.format(section, key), 'expected text, got {!r}'.format(value))
        if choices is not None and value not in choices:
            raise ConfigError('{}.{}'.format(section, key), 'must be one of {}'.format(', '.join(choices)))
        return value

    def number(self, section, key, default=KeyError, positive=False):
        value = self.get(section, key, default)
        field = '{}.{}'.format(section, key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(field, 'expected a number, got {!r}'.format(value))
        if positive and not value > 0:
            raise ConfigError(field, 'must be positive')
        return float(value)

    def flag(self, section, key, default=False):
        value = self.get(section, key, default)
        if not isinstance(value, bool):
            raise ConfigError('{}.{}'.format(section, key), 'expected true or false')
        return value

    def names(self, section, key, count=None):
        value = self.get(section, key)
        field = '{}.{}'.format(section, key)
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(field, 'expected a list of names')
        if count is not None and len(value) != count:
            raise ConfigError(field, 'expected {} entries, got {}'.format(count, len(value)))
        return tuple(value)

    def vector(self, section, key, count=None, default=KeyError):
        value = self.get(section, key, default)
        field = '{}.{}'.format(section, key)
        if value == ():
            return ()
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(field, 'expected a list of numbers')
        if count is not None and len(value) != count:
            raise ConfigError(field, 'expected {} entries, got {}'.format(count, len(value)))
        return tuple(float(v) for v in value)

    def matrix(self, section, key, shape):
        value = self.get(section, key)
        field = '{}.{}'.format(section, key)
        declared = self.get(section, key + '_shape', None)
        try:
            if declared is not None:
                a = np.array(value, dtype=float).reshape([int(d) for d in declared])
            else:
                a = np.array(value, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(field, 'cannot read matrix: {}'.format(exc))
        if a.ndim != 2 or a.shape != tuple(shape):
            raise ConfigError(field, 'expected shape {}, got {}'.format(tuple(shape), a.shape))
        if not np.all(np.isfinite(a)):
            raise ConfigError(field, 'entries must be finite')
        return _rows(a)


def _units(reader, section, key, count, unit_set):
    units = reader.names(section, key, count)
    for unit in units:
        try:
            unit_factor(unit, unit_set)
        except ValueError as exc:
            raise ConfigError('{}.{}'.format(section, key), str(exc))
    return units


def _box(reader, prefix, count, unit_set):
    lo = reader.vector('limits', prefix + '_min', count)
    hi = reader.vector('limits', prefix + '_max', count)
    units = _units(reader, 'limits', prefix + '_units', count, unit_set)
    for i, (a, b) in enumerate(zip(lo, hi)):
        if not a < b:
            raise ConfigError('limits.{}_min'.format(prefix),
                              'channel {}: min {} must be below max {}'.format(i, a, b))
    return lo, hi, units


def validate(sections):
    '''Check a parsed scenario and return its immutable ScenarioConfig.'''
    reader = _Reader(sections)
    kind = reader.text('scenario', 'kind', choices=KINDS)
    unit_set = reader.text('scenario', 'unit_set', 'si', choices=tuple(GRAVITY))

    state_names = reader.names('plant', 'state_names')
    input_names = reader.names('plant', 'input_names')
    n, m = len(state_names), len(input_names)
    reg_names = reader.names('plant', 'reg_names', m)
    lim_names = reader.names('plant', 'lim_names', m)
    A = reader.matrix('plant', 'a', (n, n))
    B = reader.matrix('plant', 'b', (n, m))
    C_lim = reader.matrix('plant', 'c_lim', (m, n))
    C_reg = reader.matrix('plant', 'c_reg', (m, n))
    D_reg = reader.matrix('plant', 'd_reg', (m, m))

    output_min, output_max, output_units = _box(reader, 'output', m, unit_set)
    input_min = input_max = input_units = ()
    input_guard = 0.0
    if kind == 'servo':
        input_min, input_max, input_units = _box(reader, 'input', m, unit_set)
        input_guard = reader.number('limits', 'input_guard', 0.0)
        if not 0.0 <= input_guard < 0.5:
            raise ConfigError('limits.input_guard', 'must lie in [0, 0.5)')
    channels = 2 * m if kind == 'servo' else m

    has_roots = sections.get('cbf', {}).get('roots') is not None
    has_alpha = sections.get('cbf', {}).get('alpha') is not None
    if has_roots == has_alpha:
        raise ConfigError('cbf.roots', 'give exactly one of cbf.roots and cbf.alpha')
    roots, alpha = (), ()
    if has_roots:
        value = reader.get('cbf', 'roots')
        if not isinstance(value, list) or len(value) != channels or not all(isinstance(r, list) for r in value):
            raise ConfigError('cbf.roots', 'expected {} lists of roots'.format(channels))
        try:
            roots = PolynomialBank(tuple(tuple(r) for r in value)).roots
        except (TypeError, ValueError) as exc:
            raise ConfigError('cbf.roots', str(exc))
        if kind == 'servo' and any(len(r) != 1 for r in roots[:m]):
            raise ConfigError('cbf.roots', 'baseline command channels take one root each')
    else:
        alpha = reader.vector('cbf', 'alpha', channels)
        if any(not a > 0 for a in alpha):
            raise ConfigError('cbf.alpha', 'alpha targets must be positive')
    zero_tol = reader.number('cbf', 'zero_tol', 1e-9, positive=True)

    baseline_form = reader.text('baseline', 'form', choices=BASELINE_FORMS)
    given = sections.get('baseline', {})
    gains_given = given.get('k_x') is not None
    weights_given = given.get('q') is not None or given.get('r') is not None
    if (baseline_form == 'gains' and weights_given) or (baseline_form == 'lqr' and gains_given):
        raise ConfigError('baseline.form', 'give either explicit gains or LQR weights, not both')
    K_x, Q, R = (), (), ()
    n_ctrl = n + m if kind == 'servo' else n
    if baseline_form == 'gains':
        K_x = reader.matrix('baseline', 'k_x', (m, n_ctrl))
    else:
        if kind != 'servo':
            raise ConfigError('baseline.form', 'LQR baselines are designed for servo scenarios')
        Q = reader.vector('baseline', 'q', n_ctrl)
        R = reader.vector('baseline', 'r', m)
        if any(q < 0 for q in Q):
            raise ConfigError('baseline.q', 'weights must be nonnegative')
        if any(not r > 0 for r in R):
            raise ConfigError('baseline.r', 'weights must be positive')

    command_units = _units(reader, 'command', 'units', m, unit_set)
    commands = []
    for name in reg_names:
        value = reader.get('command', name.lower(), [])
        field = 'command.{}'.format(name.lower())
        if not isinstance(value, list) or not all(isinstance(p, list) and len(p) == 2 for p in value):
            raise ConfigError(field, 'expected a list of [time, level] pairs')
        schedule = tuple((float(t), float(level)) for t, level in value)
        try:
            CommandSignal((schedule,))
        except ValueError as exc:
            raise ConfigError(field, str(exc))
        commands.append(schedule)

    dt = reader.number('simulation', 'dt', 1e-3, positive=True)
    horizon = sections.get('simulation', {}).get('horizon')
    if horizon is not None:
        horizon = reader.number('simulation', 'horizon', positive=True)
        if horizon < dt:
            raise ConfigError('simulation.horizon', 'horizon must be at least one step')
    x0 = reader.vector('simulation', 'x0', n + m if kind == 'servo' else n, default=())

    config = ScenarioConfig(
        name=reader.text('scenario', 'name'), description=reader.text('scenario', 'description', ''),
        kind=kind, unit_set=unit_set, state_names=state_names, input_names=input_names,
        reg_names=reg_names, lim_names=lim_names, A=A, B=B, C_lim=C_lim, C_reg=C_reg, D_reg=D_reg,
        output_min=output_min, output_max=output_max, output_units=output_units,
        input_min=input_min, input_max=input_max, input_units=input_units, input_guard=input_guard,
        roots=roots, alpha=alpha, zero_tol=zero_tol, baseline_form=baseline_form, K_x=K_x, Q=Q, R=R,
        command_units=command_units, commands=tuple(commands), dt=dt, horizon=horizon, x0=x0,
        proj_tol=reader.number('simulation', 'proj_tol', 0.01, positive=True),
        baseline_only=reader.flag('simulation', 'baseline_only', True),
        saturate=reader.flag('simulation', 'saturate', False),
        margins=reader.flag('analysis', 'margins', True),
        w_min=reader.number('analysis', 'w_min', 1e-3, positive=True),
        w_max=reader.number('analysis', 'w_max', 1e3, positive=True),
        points=int(reader.number('analysis', 'points', 400, positive=True)))
    if not config.w_min < config.w_max:
        raise ConfigError('analysis.w_min', 'w_min must be below w_max')
    logger.debug('validated scenario %s', config.name)
    return config


def load_scenario(path):
    try:
        sections = parse_config(path)
    except (IOError, ValueError) as exc:
        raise ConfigError('file', str(exc))
    return validate(sections)


def write_scenario(config, path):
    return write_config(config.sections(), path)
