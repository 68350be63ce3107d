# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Command line entry point: sample, compare, diagnose and stein-check"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from srld import __version__
from srld.bench import ConfigError, ExperimentConfig, run_experiment
from srld.diagnostics import evaluate
from srld.dynamics import ChainDiverged, Phase, initial_state
from srld.report import ReportError, emit_reports, read_trace_csv, write_trace_csv
from srld.stein import square_grid, stein_identity_residual
from srld.targets import NoExactSampler, make_target
from srld.util.config import DocumentError, load_document, update
from srld.util.search import TooManyResult, search_one

# Init logger
logger = logging.getLogger(__name__)

LOGLEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')
DEFAULT_SAMPLE = {
    'target': 'gaussian:d=2,var=1',
    'method': {'name': None, 'method': 'srld', 'step_size': 1e-3, 'total_steps': 20000},
}
MAX_GRID_POINTS = 100000


def _alpha(text):
    if text == 'auto':
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f'alpha must be a number or "auto", got "{text}"'
        ) from None


def _sizes(text):
    try:
        sizes = [int(part) for part in text.split(',') if part]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f'sizes must be comma separated integers: "{text}"'
        ) from None
    if not sizes:
        raise argparse.ArgumentTypeError('at least one sample size is required')
    return sizes


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='experiment seed (overrides config)')
    common.add_argument('--config', default=None, help='experiment config file (JSON or YAML)')
    common.add_argument('--out', default=None, help='output directory')
    common.add_argument(
        '--loglevel', choices=LOGLEVELS, default='WARNING', help='log level on stderr'
    )

    parser = argparse.ArgumentParser(
        prog='srld', description='Self-repulsive Langevin sampling and benchmark harness'
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    sample = commands.add_parser('sample', parents=[common], help='run one chain on one target')
    sample.add_argument('--target', default=None, help='target, e.g. banana or gaussian:d=2,var=1')
    sample.add_argument('--method', choices=('langevin', 'srld', 'general'), default=None)
    sample.add_argument('--name', default=None, help='method entry of --config to run')
    sample.add_argument('--step-size', type=float, default=None, help='step size eta')
    sample.add_argument('--total-steps', type=int, default=None, help='chain length T')
    sample.add_argument('--alpha', type=_alpha, default=None, help='repulsion weight or "auto"')
    sample.add_argument('--window-size', type=int, default=None, help='window size M')
    sample.add_argument('--thinning', type=int, default=None, help='thinning factor c_eta')
    sample.add_argument('--bandwidth', default=None, help='"median" or "fixed:<sigma>"')
    sample.add_argument('--keep-every', type=int, default=None, help='CSV row stride')
    sample.set_defaults(handler=cmd_sample)

    compare = commands.add_parser(
        'compare', parents=[common], help='paired experiment from a config file'
    )
    compare.add_argument(
        '--workers',
        type=int,
        default=None,
        help='worker processes (default: SRLD_THREADS or CPU count)',
    )
    compare.set_defaults(handler=cmd_compare)

    diagnose = commands.add_parser(
        'diagnose', parents=[common], help='metrics of a trace CSV against a reference CSV'
    )
    diagnose.add_argument('--trace', required=True, help='trace CSV')
    diagnose.add_argument('--reference', required=True, help='reference CSV')
    diagnose.add_argument('--max-lag', type=int, default=50, help='autocorrelation lags')
    diagnose.add_argument('--eval-points', type=int, default=1000, help='MMD/W1 subset size')
    diagnose.add_argument(
        '--include-burnin', action='store_true', help='keep rows tagged burnin'
    )
    diagnose.set_defaults(handler=cmd_diagnose)

    stein = commands.add_parser(
        'stein-check', parents=[common], help='Stein identity residual table'
    )
    stein.add_argument('--target', default='gaussian:d=2,var=1', help='target with exact sampler')
    stein.add_argument(
        '--sizes', type=_sizes, default=[1000, 10000, 100000], help='e.g. 1000,10000,100000'
    )
    stein.add_argument('--sigma', type=float, default=1.0, help='kernel bandwidth')
    stein.add_argument('--grid-per-axis', type=int, default=5, help='grid points per axis')
    stein.add_argument('--grid-range', type=float, default=2.0, help='grid covers [-r, r]^d')
    stein.set_defaults(handler=cmd_stein_check)
    return parser


def _sample_document(args) -> Dict[str, Any]:
    """Target and method entry for `sample`: defaults, then --config, then flags"""
    document = json.loads(json.dumps(DEFAULT_SAMPLE))
    if args.config:
        data, _ = load_document(args.config)
        if not isinstance(data, dict):
            raise ConfigError('experiment config must be a mapping', path=args.config)
        methods = data.get('methods') or []
        if args.name:
            try:
                chosen = search_one(methods, name=args.name)
            except TooManyResult:
                raise ConfigError(
                    f'several methods named "{args.name}"', 'methods', path=args.config
                ) from None
            if chosen is None:
                raise ConfigError(f'no method named "{args.name}"', 'methods', path=args.config)
            methods = [chosen]
        update(
            document,
            {
                'target': data.get('target'),
                'method': methods[0] if methods else None,
                'init': data.get('init'),
            },
        )
    update(
        document,
        {
            'target': args.target,
            'method': {
                'method': args.method,
                'step_size': args.step_size,
                'total_steps': args.total_steps,
                'alpha': args.alpha,
                'window_size': args.window_size,
                'thinning': args.thinning,
                'bandwidth': args.bandwidth,
                'keep_every': args.keep_every,
            },
        },
    )
    if args.method and not (args.config and args.name):
        document['method']['name'] = args.method
    method = document['method']
    if method.get('name') is None:
        method['name'] = method['method']
    if method['method'] != 'general':
        method.pop('dynamics', None)
    method.pop('match_step_size', None)
    return document


def cmd_sample(args) -> int:
    document = _sample_document(args)
    entry = document['method']
    config = ExperimentConfig.from_dict(
        {'target': document['target'], 'methods': [entry], 'init': document.get('init') or {}},
        path=args.config,
    )
    spec = config.methods[0]
    target = make_target(config.target)
    seed = args.seed if args.seed is not None else 0
    theta0 = np.asarray(config.theta0) if config.theta0 else initial_state(target, seed)
    trace = spec.run(target, theta0, seed)
    out = args.out or '.'
    os.makedirs(os.path.join(out, 'traces'), exist_ok=True)
    path = write_trace_csv(trace, os.path.join(out, 'traces', f'{spec.name}_{seed}.csv'))
    samples = trace.samples()
    print(f'{spec.name} on {target.name}, seed {seed}: {len(trace)} steps -> {path}')
    print(f'post burn-in mean: {np.array2string(samples.mean(axis=0), precision=4)}')
    if trace.alpha_used is not None:
        print(f'alpha used: {trace.alpha_used:.6g}')
    return 0


def cmd_compare(args) -> int:
    if not args.config:
        print('srld compare: --config is required', file=sys.stderr)
        return 2
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seeds = [args.seed]
    out = args.out or config.outputs or f'{config.name}-out'
    result = run_experiment(config, workers=args.workers)
    emit_reports(result, out)
    medians = result.medians()
    for method in result.methods:
        values = ', '.join(
            f'{metric}={value:.4g}' if value is not None else f'{metric}=n/a'
            for metric, value in medians[method].items()
        )
        print(f'{method}: {values}')
    for pair, metrics in result.sign_test_p().items():
        print(f'{pair}: ' + ', '.join(f'p({metric})={p:.3g}' for metric, p in metrics.items()))
    if result.basin is not None:
        for method, stats in result.basin_stats().items():
            print(
                f'{method}: basin visits {stats["visits"]}/{stats["chains"]}, '
                f'median first visit {stats["median_first_visit"]}'
            )
    print(f'reports written to {out}')
    if result.all_failed:
        print('all seeds failed', file=sys.stderr)
        return 1
    return 0


def _post_burnin(states, phases, include_burnin):
    if include_burnin or not phases:
        return states
    keep = np.array([phase != Phase.BURNIN.value for phase in phases])
    return states[keep]


def cmd_diagnose(args) -> int:
    _, trace_states, trace_phases = read_trace_csv(args.trace)
    _, reference_states, reference_phases = read_trace_csv(args.reference)
    samples = _post_burnin(trace_states, trace_phases, args.include_burnin)
    reference = _post_burnin(reference_states, reference_phases, args.include_burnin)
    report = evaluate(
        samples,
        reference,
        max_lag=args.max_lag,
        eval_points=args.eval_points,
        seed=args.seed if args.seed is not None else 0,
    )
    data = report.to_dict()
    text = json.dumps(data, indent=2, sort_keys=True)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, 'metrics.json'), 'w', encoding='utf-8') as stream:
            stream.write(text + '\n')
    print(f'mmd2={report.mmd2!r} w1={report.w1!r} ess_mean={report.ess_mean:.6g}')
    print(f'lag-1 autocorrelation={report.lag1:.6g} samples={report.sample_count}')
    return 0


def cmd_stein_check(args) -> int:
    target = make_target(args.target)
    if args.grid_per_axis**target.dim > MAX_GRID_POINTS:
        raise ConfigError(
            f'grid of {args.grid_per_axis}^{target.dim} points is too large', 'grid-per-axis'
        )
    grid = square_grid(-args.grid_range, args.grid_range, args.grid_per_axis, target.dim)
    seed = args.seed if args.seed is not None else 0
    rows: List[Dict[str, float]] = []
    print(f'{"n":>10} {"max|g|":>12} {"mean|g|":>12} {"shrink":>8}')
    previous: Optional[float] = None
    for n in args.sizes:
        norms = stein_identity_residual(target, n, grid, seed, args.sigma)
        peak = float(norms.max())
        shrink = previous / peak if previous else None
        rows.append({'n': n, 'max': peak, 'mean': float(norms.mean()), 'shrink': shrink})
        print(
            f'{n:>10} {peak:>12.6f} {norms.mean():>12.6f} '
            + (f'{shrink:>8.3f}' if shrink is not None else f'{"":>8}')
        )
        previous = peak
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, 'stein_check.json'), 'w', encoding='utf-8') as stream:
            json.dump({'target': target.name, 'sigma': args.sigma, 'rows': rows}, stream, indent=2)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return int(error.code or 0)
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, args.loglevel))
    try:
        return args.handler(args)
    except (ConfigError, DocumentError) as error:
        print(f'config error: {error}', file=sys.stderr)
        return 1
    except (ChainDiverged, NoExactSampler, ReportError, ValueError) as error:
        print(f'error: {error}', file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
