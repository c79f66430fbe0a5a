import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from tqdm import tqdm

from cbfaug.errors import ConfigError
from cbfaug.pipeline import EXIT_CONFIG, EXIT_OK, STAGES, compare_augmentors, run_scenario

DEBUG = False

VERB_STAGES = {
	'design': ('design',),
	'simulate': ('design', 'simulate'),
	'analyze': ('design', 'analyze'),
	'run': STAGES,
}


def log(s):
	if DEBUG:
		print(s)


def scenario_dir(out, config):
	return os.path.join(out, os.path.splitext(os.path.basename(config))[0])


def _run_one(job):
	config, out_dir, stages, dt, render, seed, progress = job
	return config, run_scenario(config, out_dir, stages=stages, dt=dt, render=render, progress=progress,
								seed=seed)


def run(args):
	stages = VERB_STAGES[args.verb]
	configs = args.config or ['scalar-servo']
	print('###### Step One: Setup Scenarios')
	for config in configs:
		log('The scenario is {}'.format(config))
	jobs = [(config, scenario_dir(args.out, config), stages, args.dt, args.render, args.seed, len(configs) == 1)
			for config in configs]

	print('###### Step Two: Run {} stages'.format(', '.join(stages)))
	results = []
	if len(jobs) == 1 or args.workers <= 1:
		for job in tqdm(jobs, desc='scenarios', disable=len(jobs) == 1):
			results.append(_run_one(job))
	else:
		with ProcessPoolExecutor(max_workers=args.workers) as pool:
			for result in tqdm(pool.map(_run_one, jobs), total=len(jobs), desc='scenarios'):
				results.append(result)

	print('###### Step Three: Summary')
	worst = EXIT_OK
	for config, (status, manifest) in results:
		print('{}: exit {} ({} files)'.format(config, status, len(manifest.get('files', {}))))
		if 'error' in manifest:
			print('    {}'.format(manifest['error']))
		worst = max(worst, status)
	return worst


def compare(args):
	print('###### Step One: Compare CBF and projection augmentation')
	status = EXIT_OK
	for config in args.config or ['scalar-servo']:
		try:
			table = compare_augmentors(config, scenario_dir(args.out, config), dt=args.dt)
		except ConfigError as exc:
			print('{}: {}'.format(config, exc))
			status = EXIT_CONFIG
			continue
		for name in ('cbf', 'projection'):
			print('{}: {} max violation {:.3e}'.format(config, name, table[name]['violation']))
		for row in table['projection_sweep']:
			log('proj_tol {:.3g}: violation {:.3e}'.format(row['proj_tol'], row['violation']))
	return status


def get_parser():
	parser = argparse.ArgumentParser(description='CBF augmentation design, simulation and margin analysis')
	subparsers = parser.add_subparsers(dest='verb')
	subparsers.required = True
	for verb in ('design', 'simulate', 'analyze', 'run', 'compare'):
		sub = subparsers.add_parser(verb)
		sub.add_argument('--config', action='append', type=str,
						 help='Scenario file or registered name [\'scalar-servo, aircraft-lateral\'], repeatable')
		sub.add_argument('--out', nargs='?', type=str, default='runs',
						 help='Output directory, one subdirectory per scenario')
		sub.add_argument('--dt', nargs='?', type=float, default=None,
						 help='Integration step, overrides the scenario file')
		sub.add_argument('--seed', nargs='?', type=int, default=None,
						 help='Seed recorded in the manifest for randomised fixtures')
		sub.add_argument('--workers', nargs='?', type=int, default=os.cpu_count() or 1,
						 help='Concurrent scenarios in batch mode')
		sub.add_argument('--render', action='store_true',
						 help='Also render PNGs with matplotlib')
		sub.add_argument('--debug', action='store_true',
						 help='Verbose output')
	return parser


def main(argv=None):
	global DEBUG
	args = get_parser().parse_args(argv)
	DEBUG = args.debug
	logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO,
						format='%(asctime)s %(levelname)s %(name)s: %(message)s')
	logging.captureWarnings(True)
	if args.seed is not None:
		np.random.seed(args.seed)
	if args.verb == 'compare':
		return compare(args)
	return run(args)


if __name__ == '__main__':
	sys.exit(main())
