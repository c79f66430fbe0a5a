'''
Scenario pipelines: design, simulate and analyze stages with their artifacts
'''

import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cbfaug import plots
from cbfaug.design import ConstraintBox, PolynomialBank, build_design, weight_identity_check
from cbfaug.errors import CbfError, ConfigError, DesignError, EigenSolverError
from cbfaug.loader import get_scenario
from cbfaug.lti import RelativeDegreeVector, hurwitz, relative_degree, require_controllable
from cbfaug.margins import activation_sweep, bode_data, default_grid, loop_gain_model, write_bode_csv, \
    write_margin_csv
from cbfaug.servo import BaselineController, build_extended, lqr_pi_design, proportional_baseline
from cbfaug.sim import (approach_time, boundary_dynamics_check, integrator_bound, integrator_growth,
                        input_limit_report, invariance_report, projection_loop, proportional_loop, replay_controls,
                        servo_loop, simulate, write_trajectory_csv)
from cbfaug.utils import recursive_glob, sha256sum

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DESIGN = 3
EXIT_CHECK = 4

STAGES = ('design', 'simulate', 'analyze')
WEIGHT_TOL = 1e-10
REPLAY_TOL = 1e-12
PROJECTION_SWEEP = (4.0, 2.0, 1.0, 0.5, 0.25)


@dataclass(frozen=True, eq=False)
class ScenarioDesign:
    '''Everything the later stages need from the design stage.'''
    config: object
    plant: object
    baseline: BaselineController
    design: object
    cbf: object
    box: ConstraintBox
    input_box: Optional[ConstraintBox] = None
    extended: object = None

    @property
    def channels(self):
        return self.cbf.m

    def loop(self, augmented=True):
        saturation = None
        if self.config.saturate and self.input_box is not None:
            saturation = (self.input_box.y_min, self.input_box.y_max)
        if self.extended is not None:
            return servo_loop(self.extended, augmented=augmented, saturation=saturation)
        return proportional_loop(self.plant, self.baseline, self.cbf, self.box, augmented=augmented,
                                 saturation=saturation)


def design_proportional(config):
    plant = config.plant()
    if config.baseline_form != 'gains':
        raise ConfigError('baseline.form', 'proportional scenarios take explicit gains')
    baseline = proportional_baseline(plant, np.array(config.K_x))
    r = relative_degree(plant, config.zero_tol)
    cbf = build_design(plant, config.bank(r), r)
    return ScenarioDesign(config=config, plant=plant, baseline=baseline, design=cbf, cbf=cbf,
                          box=config.output_box())


def design_servo(config):
    plant = config.plant()
    require_controllable(plant)
    m = plant.m
    if config.baseline_form == 'lqr':
        baseline = lqr_pi_design(plant, config.Q, config.R)
    else:
        K = np.array(config.K_x)
        baseline = BaselineController(K_x=K, K_I=K[:, :m], K_P=K[:, m:])
    r_zlim = relative_degree(plant, config.zero_tol)
    bank = config.bank(RelativeDegreeVector((1,) * m + tuple(r_zlim)))
    input_box = config.input_box()
    ext = build_extended(plant, baseline.K_I, baseline.K_P, PolynomialBank(bank.roots[m:]),
                         [roots[0] for roots in bank.roots[:m]], config.guarded_input_box(), config.output_box(),
                         zero_tol=config.zero_tol)
    return ScenarioDesign(config=config, plant=plant, baseline=baseline, design=ext, cbf=ext.design,
                          box=ext.box, input_box=input_box, extended=ext)


def get_pipeline(kind):
    """get_pipeline

    :param kind: scenario kind, 'proportional' or 'servo'
    """
    return {
        'proportional': design_proportional,
        'servo': design_servo,
    }[kind]


def _matrix(a):
    return None if a is None else np.asarray(a).tolist()


def design_summary(sd):
    cbf = sd.cbf
    eig = np.linalg.eigvals(cbf.A_cl)
    cbf_stable, cbf_abscissa = hurwitz(cbf.A_cl)
    if sd.extended is not None:
        A_bl = sd.extended.A_ext - sd.extended.B_ext[:, sd.plant.m:] @ sd.baseline.K_x
        r_plant = sd.extended.r_zlim
    else:
        A_bl = sd.plant.A - sd.plant.B @ sd.baseline.K_x
        r_plant = cbf.r
    bl_stable, bl_abscissa = hurwitz(A_bl)
    summary = {
        'scenario': sd.config.name,
        'kind': sd.config.kind,
        'relative_degree': str(cbf.r),
        'plant_relative_degree': str(r_plant),
        'roots': [list(roots) for roots in cbf.bank.roots],
        'alpha_pi': np.diag(cbf.alpha_pi).tolist(),
        'H_x': _matrix(cbf.H_x),
        'H_u': _matrix(cbf.H_u),
        'H_u_inv': _matrix(cbf.H_u_inv),
        'cond_H_u': cbf.cond,
        'K_CBF': _matrix(cbf.K_CBF),
        'A_cl_eigenvalues': [[float(e.real), float(e.imag)] for e in eig],
        'A_cl_hurwitz': cbf_stable,
        'A_cl_abscissa': cbf_abscissa,
        'weight_identity_residual': weight_identity_check(cbf),
        'K_x': _matrix(sd.baseline.K_x),
        'K_ff': _matrix(sd.baseline.K_ff),
        'K_I': _matrix(sd.baseline.K_I),
        'K_P': _matrix(sd.baseline.K_P),
        'riccati_residual': sd.baseline.riccati_residual,
        'baseline_hurwitz': bl_stable,
        'baseline_abscissa': bl_abscissa,
    }
    summary['ok'] = bool(cbf_stable and bl_stable and summary['weight_identity_residual'] <= WEIGHT_TOL)
    return summary


def _dump(obj, path):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True)
    return path


def simulate_stage(sd, out_dir, dt, render=False):
    config = sd.config
    loop = sd.loop(augmented=True)
    x0 = config.initial_state(loop.n)
    command = config.command()
    traj = simulate(loop, command, x0, dt=dt, T=config.horizon)
    path = write_trajectory_csv(traj, os.path.join(out_dir, 'trajectory.csv'))
    plots.write_gnuplot_stub(path, '{} augmented'.format(config.name))
    if render:
        plots.render_png(path, '{} augmented'.format(config.name))

    if config.baseline_only:
        reference = simulate(sd.loop(augmented=False), command, x0, dt=dt, T=config.horizon)
        path = write_trajectory_csv(reference, os.path.join(out_dir, 'trajectory_baseline.csv'))
        plots.write_gnuplot_stub(path, '{} baseline only'.format(config.name))
        if render:
            plots.render_png(path, '{} baseline only'.format(config.name))

    report = invariance_report(traj, sd.box, design=sd.cbf)
    result = {'limited_outputs': report.to_dict(), 'replay_error': replay_controls(loop, traj)}
    boundary = {name: boundary_dynamics_check(traj, sd.cbf, sd.box, i)
                for i, name in enumerate(report.channels) if sd.cbf.r[i] == 1}
    result['boundary_residual'] = {name: check.to_dict() for name, check in boundary.items()}
    ok = report.ok and result['replay_error'] <= REPLAY_TOL and all(check.ok for check in boundary.values())
    if sd.input_box is not None:
        inputs = input_limit_report(traj, sd.input_box)
        result['plant_inputs'] = inputs.to_dict()
        if not inputs.ok:
            logger.warning('%s: total plant input leaves its limits by %s', config.name, inputs.violation)
        ok = ok and inputs.ok
    if sd.extended is not None:
        tail, head = integrator_growth(traj)
        peak = float(np.max(np.linalg.norm(traj.e_yI, axis=1)))
        bound = integrator_bound(traj, sd.extended)
        bounded = bool(np.isfinite(tail) and tail <= head and peak <= bound)
        result['integrators'] = {'max_norm': peak, 'bound': bound, 'tail_max': tail, 'head_max': head,
                                 'bounded': bounded}
        ok = ok and bounded
    result['ok'] = bool(ok)
    _dump(result, os.path.join(out_dir, 'invariance.json'))
    logger.info('%s: invariance %s', config.name, 'passed' if ok else 'FAILED')
    return result


def analyze_stage(sd, out_dir, render=False, progress=False):
    config = sd.config
    grid = default_grid(config.w_min, config.w_max, config.points)
    entries = activation_sweep(sd.design, sd.baseline, grid, progress=progress)
    path = write_margin_csv(entries, os.path.join(out_dir, 'margins.csv'))
    plots.write_gnuplot_stub(path, '{} margins per activation pattern'.format(config.name), xlabel='pattern')

    nominal = loop_gain_model(sd.design, sd.baseline, (0,) * sd.channels)
    grid, mag_db, phase_deg = bode_data(nominal, grid)
    path = write_bode_csv(grid, mag_db, phase_deg, sd.plant.input_names, os.path.join(out_dir, 'bode.csv'))
    plots.write_gnuplot_stub(path, '{} baseline loop gain'.format(config.name), xlabel='omega [rad/s]',
                             logx=True)
    if render:
        plots.render_png(path, '{} baseline loop gain'.format(config.name), xlabel='omega [rad/s]', logx=True)

    positive = [report.positive for _, report, _ in entries]
    ok = bool(all(positive))
    if not ok:
        failed = [report.label for _, report, _ in entries if not report.positive]
        logger.warning('%s: margins not positive for patterns %s', config.name, failed)
    return {'patterns': len(entries), 'ok': ok}


def write_manifest(out_dir, status, extra=None):
    path = os.path.join(out_dir, 'manifest.json')
    files = {}
    for name in recursive_glob(out_dir):
        rel = os.path.relpath(name, out_dir)
        if rel != 'manifest.json':
            files[rel] = sha256sum(name)
    manifest = dict(extra or {}, status=status, files=files)
    _dump(manifest, path)
    return manifest


def _attach_log(out_dir):
    handler = logging.FileHandler(os.path.join(out_dir, 'log.txt'), mode='w')
    handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    logging.getLogger().addHandler(handler)
    return handler


def _load(config):
    if isinstance(config, str):
        return get_scenario(config)
    return config


def run_scenario(config, out_dir, stages=STAGES, dt=None, render=False, progress=False, seed=None):
    '''Run the requested stages for one scenario and return (exit status, manifest).'''
    os.makedirs(out_dir, exist_ok=True)
    handler = _attach_log(out_dir)
    checks = {}
    try:
        try:
            config = _load(config)
            sd = get_pipeline(config.kind)(config)
        except ConfigError as exc:
            logger.error('config error: %s', exc)
            return EXIT_CONFIG, write_manifest(out_dir, EXIT_CONFIG, {'error': str(exc), 'field': exc.field})
        except (DesignError, EigenSolverError) as exc:
            logger.error('design error: %s', exc)
            return EXIT_DESIGN, write_manifest(out_dir, EXIT_DESIGN, {'error': str(exc)})

        summary = design_summary(sd)
        _dump(summary, os.path.join(out_dir, 'design.json'))
        logger.info('%s: relative degree %s, cond(H_u) = %.3e', config.name, summary['relative_degree'],
                    summary['cond_H_u'])
        checks['design'] = summary['ok']
        dt = config.dt if dt is None else dt
        try:
            if 'simulate' in stages:
                checks['simulate'] = simulate_stage(sd, out_dir, dt, render)['ok']
            if 'analyze' in stages and config.margins:
                checks['analyze'] = analyze_stage(sd, out_dir, render, progress)['ok']
        except (DesignError, EigenSolverError) as exc:
            logger.error('design error: %s', exc)
            return EXIT_DESIGN, write_manifest(out_dir, EXIT_DESIGN, {'error': str(exc)})
        except CbfError as exc:
            logger.error('check failed: %s', exc)
            return EXIT_CHECK, write_manifest(out_dir, EXIT_CHECK, {'error': str(exc), 'checks': checks})

        status = EXIT_OK if all(checks.values()) else EXIT_CHECK
        extra = {'scenario': config.name, 'stages': list(stages), 'dt': dt, 'checks': checks}
        if seed is not None:
            extra['seed'] = seed
        return status, write_manifest(out_dir, status, extra)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def _violation(traj, box):
    y = traj.y_lim
    return float(np.max(np.maximum(0.0, np.maximum(box.y_min - y, y - box.y_max))))


def compare_augmentors(config, out_dir, dt=None):
    '''CBF policy against the projection operator on the same scalar plant and command.'''
    config = _load(config)
    if config.kind != 'proportional' or len(config.state_names) != 1 or config.m != 1:
        raise ConfigError('scenario.kind', 'the comparison needs a scalar proportional scenario')
    os.makedirs(out_dir, exist_ok=True)
    sd = design_proportional(config)
    dt = config.dt if dt is None else dt
    command = config.command()
    x0 = config.initial_state(1)

    runs = {
        'cbf': sd.loop(augmented=True),
        'projection': projection_loop(sd.plant, sd.baseline, sd.box, config.proj_tol),
    }
    table = {}
    for name, loop in runs.items():
        traj = simulate(loop, command, x0, dt=dt, T=config.horizon)
        path = write_trajectory_csv(traj, os.path.join(out_dir, 'compare_{}.csv'.format(name)))
        plots.write_gnuplot_stub(path, '{} with {} augmentation'.format(config.name, name))
        report = invariance_report(traj, sd.box)
        table[name] = {'violation': _violation(traj, sd.box), 'within_tolerance': report.ok,
                       'max_abs_pi': float(np.max(np.abs(traj.pi))),
                       'max_abs_u': float(np.max(np.abs(traj.u))),
                       'approach_time': approach_time(traj, sd.box)}

    sweep = []
    for scale in PROJECTION_SWEEP:
        proj_tol = config.proj_tol * scale
        traj = simulate(projection_loop(sd.plant, sd.baseline, sd.box, proj_tol), command, x0, dt=dt,
                        T=config.horizon)
        sweep.append({'proj_tol': proj_tol, 'violation': _violation(traj, sd.box),
                      'approach_time': approach_time(traj, sd.box)})
    times = [entry['approach_time'] for entry in sweep]
    if any(b > a for a, b in zip(times, times[1:])):
        logger.warning('%s: approach to the bound does not speed up as proj_tol shrinks: %s', config.name, times)
    table['projection_sweep'] = sweep
    _dump(table, os.path.join(out_dir, 'comparison.json'))
    return table
