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

"""Experiment orchestration: configs, seed sweeps, paired comparisons and aggregation"""

import json
import logging
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from srld.base import allure_attach_json, allure_step
from srld.diagnostics import MetricReport, check_moment_bound, evaluate, first_visit
from srld.dynamics import (
    ChainDiverged,
    GeneralDynamicsSpec,
    InvalidDynamics,
    Method,
    MethodSpec,
    SamplerConfig,
    Trace,
    initial_state,
    match_step_sizes,
    run_chain,
)
from srld.kernel import BandwidthPolicy, InvalidBandwidth
from srld.targets import InvalidTargetSpec, TargetModel, TargetSpec, make_target
from srld.util.config import DocumentError, line_of, load_document
from srld.util.rng import derive_seed
from srld.util.search import search_one

# Init logger
logger = logging.getLogger(__name__)

WORKERS_ENV = 'SRLD_THREADS'
METRICS = ('mmd2', 'w1', 'ess_mean', 'lag1')
REFERENCE_BURNIN_FRACTION = 0.1


class ConfigError(ValueError):
    def __init__(self, message, field_name=None, line=None, path=None):
        self.message = message
        self.field = field_name
        self.line = line
        self.path = path
        location = ':'.join(str(part) for part in (path, line) if part is not None)
        prefix = f'{location}: ' if location else ''
        where = f'{field_name}: ' if field_name else ''
        super().__init__(f'{prefix}{where}{message}')


class Pairing(str, Enum):
    COUPLED = 'coupled-noise'
    INDEPENDENT = 'independent'


@dataclass(frozen=True)
class ReferenceConfig:
    draws: int = 2000
    langevin_steps: int = 1000000
    langevin_step_size: float = 1e-4
    seed: int = 0
    chains: int = 1


@dataclass(frozen=True)
class ReportingConfig:
    keep_every: int = 1
    max_lag: int = 50
    eval_points: int = 1000


@dataclass(frozen=True)
class Basin:
    center: Tuple[float, ...]
    radius: float


@dataclass(eq=False)
class ExperimentConfig:  # pylint: disable=too-many-instance-attributes
    target: TargetSpec
    methods: List[MethodSpec]
    name: str = 'experiment'
    pairing: Pairing = Pairing.COUPLED
    seeds: List[int] = field(default_factory=lambda: [0])
    theta0: Optional[Tuple[float, ...]] = None
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    reporting: ReportingConfig = field(default_factory=ReportingConfig)
    pilot_steps: Optional[int] = None
    basin: Optional[Basin] = None
    outputs: Optional[str] = None
    source: Optional[str] = None

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError('at least one method is required', 'methods', path=self.source)
        names = [spec.name for spec in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(
                f'method names must be unique, got {names}', 'methods', path=self.source
            )
        if self.pairing is Pairing.COUPLED:
            if len(self.methods) != 2:
                raise ConfigError(
                    f'coupled-noise pairing needs exactly 2 methods, got {len(self.methods)}',
                    'pairing',
                    path=self.source,
                )
            steps = {spec.config.total_steps for spec in self.methods}
            if len(steps) != 1:
                raise ConfigError(
                    f'coupled-noise pairing needs equal total_steps, got {sorted(steps)}',
                    'methods',
                    path=self.source,
                )
        if not self.seeds:
            raise ConfigError('at least one seed is required', 'seeds', path=self.source)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError('seeds must be unique', 'seeds', path=self.source)

    @classmethod
    def load(cls, path) -> 'ExperimentConfig':
        try:
            data, node = load_document(path)
        except DocumentError as error:
            raise ConfigError(error.message, None, error.line, path) from error
        return cls.from_dict(data, node=node, path=str(path))

    @classmethod
    def from_dict(cls, data, node=None, path=None) -> 'ExperimentConfig':
        return _ConfigReader(data, node, path).read()

    def method(self, name: str) -> MethodSpec:
        spec = search_one(self.methods, name=name)
        if spec is None:
            raise KeyError(name)
        return spec


class _ConfigReader:
    """Turns a parsed document into an ExperimentConfig, errors point at the offending line"""

    def __init__(self, data, node, path):
        self.data = data
        self.node = node
        self.path = path

    def fail(self, field_path, message):
        field_path = tuple(field_path)
        return ConfigError(
            message,
            '.'.join(str(part) for part in field_path) or None,
            line_of(self.node, field_path),
            self.path,
        )

    def section(self, key) -> Dict[str, Any]:
        value = self.data.get(key) or {}
        if not isinstance(value, dict):
            raise self.fail([key], 'must be a mapping')
        return value

    def read(self) -> ExperimentConfig:
        if not isinstance(self.data, dict):
            raise self.fail([], 'experiment config must be a mapping')
        for key in ('target', 'methods'):
            if key not in self.data:
                raise self.fail([], f'"{key}" is required')
        try:
            target = TargetSpec.from_dict(self.data['target'])
            target.validate()
        except InvalidTargetSpec as error:
            raise self.fail(['target', error.field], str(error)) from None
        except (TypeError, ValueError) as error:
            raise self.fail(['target'], str(error)) from None
        dim = make_target(target).dim
        methods = self.data['methods']
        if not isinstance(methods, list):
            raise self.fail(['methods'], 'must be a list')
        try:
            default = Pairing.COUPLED if len(methods) == 2 else Pairing.INDEPENDENT
            pairing = Pairing(self.data.get('pairing', default.value))
        except ValueError:
            raise self.fail(['pairing'], 'must be "coupled-noise" or "independent"') from None
        config = ExperimentConfig(
            target=target,
            methods=[self.method(entry, index, dim) for index, entry in enumerate(methods)],
            name=str(self.data.get('name', 'experiment')),
            pairing=pairing,
            seeds=self.seeds(),
            theta0=self.theta0(dim),
            reference=self.frozen(ReferenceConfig, 'reference'),
            reporting=self.frozen(ReportingConfig, 'reporting'),
            pilot_steps=self.pilot_steps(),
            basin=self.basin(dim),
            outputs=self.data.get('outputs'),
            source=self.path,
        )
        try:
            config.validate()
        except ConfigError as error:
            raise self.fail([error.field] if error.field else [], error.message) from None
        return config

    def method(self, entry, index, dim) -> MethodSpec:
        where = ['methods', index]
        if not isinstance(entry, dict):
            raise self.fail(where, 'method entry must be a mapping')
        unknown = set(entry) - {
            'name',
            'method',
            'step_size',
            'alpha',
            'window_size',
            'thinning',
            'total_steps',
            'bandwidth',
            'keep_every',
            'match_step_size',
            'dynamics',
        }
        if unknown:
            raise self.fail(where + [sorted(unknown)[0]], 'unknown field')
        try:
            method = Method(entry.get('method', 'srld'))
        except ValueError:
            raise self.fail(where + ['method'], 'must be langevin, srld or general') from None
        for key in ('step_size', 'total_steps'):
            if key not in entry:
                raise self.fail(where, f'"{key}" is required')
        alpha = entry.get('alpha', 10.0)
        if alpha == 'auto':
            alpha = None
        elif not isinstance(alpha, (int, float)):
            raise self.fail(where + ['alpha'], 'must be a number or "auto"')
        try:
            bandwidth = BandwidthPolicy.parse(entry.get('bandwidth', 'median'))
        except InvalidBandwidth as error:
            raise self.fail(where + ['bandwidth'], str(error)) from None
        try:
            cfg = SamplerConfig(
                step_size=float(entry['step_size']),
                total_steps=int(entry['total_steps']),
                alpha=None if alpha is None else float(alpha),
                window_size=int(entry.get('window_size', 10)),
                thinning=int(entry.get('thinning', 100)),
                bandwidth=bandwidth,
                keep_every=int(entry.get('keep_every', 1)),
            )
            cfg.validate(method)
        except (TypeError, ValueError) as error:
            raise self.fail(where, str(error)) from None
        dynamics = None
        if 'dynamics' in entry:
            if method is not Method.GENERAL:
                raise self.fail(where + ['dynamics'], 'only "general" chains take dynamics')
            raw = entry['dynamics'] or {}
            try:
                dynamics = GeneralDynamicsSpec.build(dim, raw.get('D'), raw.get('Q'))
            except (InvalidDynamics, ValueError) as error:
                raise self.fail(where + ['dynamics'], str(error)) from None
            if dynamics.dim != dim:
                raise self.fail(where + ['dynamics'], f'must be {dim}x{dim} matrices')
        return MethodSpec(
            name=str(entry.get('name', method.value)),
            method=method,
            config=cfg,
            dynamics=dynamics,
            match_step_size=bool(entry.get('match_step_size', False)),
        )

    def seeds(self) -> List[int]:
        seeds = self.data.get('seeds', [0])
        if isinstance(seeds, int):
            seeds = list(range(seeds))
        if not isinstance(seeds, list) or not all(isinstance(seed, int) for seed in seeds):
            raise self.fail(['seeds'], 'must be a list of integers or a seed count')
        return seeds

    def theta0(self, dim) -> Optional[Tuple[float, ...]]:
        theta0 = self.section('init').get('theta0')
        if theta0 is None:
            return None
        if not isinstance(theta0, list) or len(theta0) != dim:
            raise self.fail(['init', 'theta0'], f'must be a list of {dim} numbers')
        return tuple(float(value) for value in theta0)

    def frozen(self, cls, key):
        values = self.section(key)
        try:
            return cls(**values)
        except TypeError as error:
            raise self.fail([key], str(error)) from None

    def pilot_steps(self) -> Optional[int]:
        if 'match_step_sizes' not in self.data:
            return None
        steps = self.section('match_step_sizes').get('pilot_steps', 5000)
        if not isinstance(steps, int) or steps < 1000:
            raise self.fail(['match_step_sizes', 'pilot_steps'], 'must be an integer >= 1000')
        return steps

    def basin(self, dim) -> Optional[Basin]:
        if 'basin' not in self.data:
            return None
        values = self.section('basin')
        center = values.get('center')
        if not isinstance(center, list) or len(center) != dim:
            raise self.fail(['basin', 'center'], f'must be a list of {dim} numbers')
        radius = float(values.get('radius', 1.0))
        if not radius > 0:
            raise self.fail(['basin', 'radius'], 'must be positive')
        return Basin(tuple(float(value) for value in center), radius)


@dataclass
class MethodOutcome:
    """What one chain of one seed produced; report is None when the chain failed"""

    report: Optional[MetricReport] = None
    error: Optional[str] = None
    alpha_used: Optional[float] = None
    bandwidth_used: Optional[float] = None
    first_visit: Optional[int] = None
    moment_ok: Optional[bool] = None
    trace: Optional[Trace] = field(default=None, compare=False, repr=False)

    @property
    def failed(self) -> bool:
        return self.report is None

    def value(self, metric: str) -> Optional[float]:
        if self.report is None:
            return None
        return float(getattr(self.report, metric))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'failed': self.failed,
            'error': self.error,
            'alpha_used': self.alpha_used,
            'bandwidth_used': self.bandwidth_used,
            'first_visit': self.first_visit,
            'moment_ok': self.moment_ok,
        }
        if self.report is not None:
            data.update(self.report.to_dict())
            data['autocorr_mean'] = self.report.autocorr_mean
            data['lag1'] = self.report.lag1
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MethodOutcome':
        report = None
        if not data.get('failed'):
            report = MetricReport.from_dict(
                {key: data[key] for key in MetricReport.__dataclass_fields__ if key in data}
            )
        return cls(
            report=report,
            error=data.get('error'),
            alpha_used=data.get('alpha_used'),
            bandwidth_used=data.get('bandwidth_used'),
            first_visit=data.get('first_visit'),
            moment_ok=data.get('moment_ok'),
        )


@dataclass
class SeedOutcome:
    seed: int
    methods: Dict[str, MethodOutcome]

    @property
    def all_failed(self) -> bool:
        return all(outcome.failed for outcome in self.methods.values())


def sign_test(diffs) -> float:
    """Exact two-sided binomial sign test, zero differences dropped"""
    nonzero = [diff for diff in diffs if diff != 0]
    if not nonzero:
        return 1.0
    positive = sum(1 for diff in nonzero if diff > 0)
    return float(stats.binomtest(positive, len(nonzero), 0.5).pvalue)


def _median(values) -> Optional[float]:
    values = [value for value in values if value is not None]
    return float(np.median(values)) if values else None


def _basin_from_dict(data: Optional[Dict[str, Any]]) -> Optional[Basin]:
    if not data:
        return None
    return Basin(tuple(float(value) for value in data['center']), float(data['radius']))


@dataclass
class ComparisonResult:  # pylint: disable=too-many-instance-attributes
    name: str
    target: Dict[str, Any]
    methods: List[str]
    seeds: List[int]
    per_seed: List[SeedOutcome]
    pairing: str = Pairing.COUPLED.value
    matched_step_size: Optional[float] = None
    keep_every: int = 1
    basin: Optional[Basin] = None

    @classmethod
    def empty(cls, name='empty') -> 'ComparisonResult':
        return cls(name=name, target={}, methods=[], seeds=[], per_seed=[])

    @property
    def all_failed(self) -> bool:
        return bool(self.per_seed) and all(outcome.all_failed for outcome in self.per_seed)

    def values(self, method: str, metric: str) -> List[Optional[float]]:
        return [outcome.methods[method].value(metric) for outcome in self.per_seed]

    def medians(self) -> Dict[str, Dict[str, Optional[float]]]:
        return {
            method: {metric: _median(self.values(method, metric)) for metric in METRICS}
            for method in self.methods
        }

    def paired_diffs(self) -> Dict[str, Dict[str, List[float]]]:
        """methods[0] - methods[i] per metric over seeds where neither chain failed"""
        result = {}
        if not self.methods:
            return result
        first = self.methods[0]
        for other in self.methods[1:]:
            result[f'{first}-{other}'] = {
                metric: [
                    a - b
                    for a, b in zip(self.values(first, metric), self.values(other, metric))
                    if a is not None and b is not None
                ]
                for metric in METRICS
            }
        return result

    def sign_test_p(self) -> Dict[str, Dict[str, float]]:
        return {
            pair: {metric: sign_test(diffs) for metric, diffs in metrics.items()}
            for pair, metrics in self.paired_diffs().items()
        }

    def basin_stats(self) -> Dict[str, Dict[str, Any]]:
        """Per method: chains that entered the basin after burn-in and the median first visit.

        Never-visiting chains count as infinitely late, so the median is None when it
        lands on one of them. Failed chains are left out.
        """
        result = {}
        for method in self.methods:
            outcomes = [
                outcome.methods[method]
                for outcome in self.per_seed
                if not outcome.methods[method].failed
            ]
            visits = [outcome.first_visit for outcome in outcomes]
            hits = [visit for visit in visits if visit is not None]
            median = None
            if outcomes:
                value = np.median([np.inf if visit is None else visit for visit in visits])
                median = float(value) if np.isfinite(value) else None
            result[method] = {
                'visits': len(hits),
                'chains': len(outcomes),
                'median_first_visit': median,
            }
        return result

    def to_dict(self) -> Dict[str, Any]:
        aggregate: Dict[str, Any] = {
            'medians': self.medians(),
            'paired_diffs': self.paired_diffs(),
            'sign_test_p': self.sign_test_p(),
        }
        if self.basin is not None:
            aggregate['basin'] = self.basin_stats()
        return {
            'name': self.name,
            'target': self.target,
            'methods': list(self.methods),
            'seeds': list(self.seeds),
            'pairing': self.pairing,
            'matched_step_size': self.matched_step_size,
            'keep_every': self.keep_every,
            'basin': (
                None
                if self.basin is None
                else {'center': list(self.basin.center), 'radius': self.basin.radius}
            ),
            'per_seed': {
                str(outcome.seed): {
                    method: result.to_dict() for method, result in outcome.methods.items()
                }
                for outcome in self.per_seed
            },
            'aggregate': aggregate,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ComparisonResult':
        raw = data.get('per_seed', {})
        per_seed = [
            SeedOutcome(
                int(seed),
                {
                    method: MethodOutcome.from_dict(values)
                    for method, values in raw[str(seed)].items()
                },
            )
            for seed in data.get('seeds', [])
            if str(seed) in raw
        ]
        return cls(
            name=data.get('name', 'empty'),
            target=data.get('target', {}),
            methods=list(data.get('methods', [])),
            seeds=list(data.get('seeds', [])),
            per_seed=per_seed,
            pairing=data.get('pairing', Pairing.COUPLED.value),
            matched_step_size=data.get('matched_step_size'),
            keep_every=data.get('keep_every', 1),
            basin=_basin_from_dict(data.get('basin')),
        )

    @classmethod
    def from_json(cls, path) -> 'ComparisonResult':
        with open(path, 'r', encoding='utf-8') as stream:
            return cls.from_dict(json.load(stream))


_REFERENCE_CACHE: Dict[Tuple[str, ReferenceConfig], np.ndarray] = {}


def _reference_chain(target: TargetModel, reference: ReferenceConfig, index: int, draws: int):
    label = 'reference' if index == 0 else f'reference:{index}'
    start_seed = reference.seed if index == 0 else derive_seed(reference.seed, label)
    cfg = SamplerConfig(
        step_size=reference.langevin_step_size,
        total_steps=reference.langevin_steps,
        alpha=0.0,
        window_size=1,
        thinning=1,
        seed=derive_seed(reference.seed, label),
    )
    trace = run_chain(Method.LANGEVIN, target, cfg, initial_state(target, start_seed))
    kept = trace.states[int(REFERENCE_BURNIN_FRACTION * len(trace)) :]
    index = np.linspace(0, kept.shape[0] - 1, min(draws, kept.shape[0]))
    return kept[index.round().astype(int)]


def reference_samples(target: TargetModel, reference: ReferenceConfig) -> np.ndarray:
    """Exact draws when the target has a sampler, otherwise long fine-step Langevin runs.

    Each of `reference.chains` Langevin runs drops its first tenth and is thinned
    evenly to its share of `draws`; the pooled rows are cached per
    (target, reference config) for the life of the process.
    """
    if target.has_exact_sampler:
        return target.sample_exact(reference.draws, reference.seed)
    if reference.chains < 1:
        raise ValueError(f'reference.chains must be positive, got {reference.chains}')
    label = target.spec.to_dict() if target.spec else target.name
    key = (json.dumps(label, sort_keys=True), reference)
    cached = _REFERENCE_CACHE.get(key)
    if cached is not None:
        return cached
    logger.info(
        'Building Langevin reference for %s: %d chains of %d steps of %g',
        target.name,
        reference.chains,
        reference.langevin_steps,
        reference.langevin_step_size,
    )
    shares = [part.size for part in np.array_split(np.arange(reference.draws), reference.chains)]
    with allure_step(f'Reference run for {target.name}'):
        samples = np.concatenate(
            [
                _reference_chain(target, reference, index, share)
                for index, share in enumerate(shares)
            ]
        )
    _REFERENCE_CACHE[key] = samples
    return samples


def method_seed(pairing: Pairing, seed: int, index: int) -> int:
    """Coupled chains share the experiment seed, independent ones get a child seed each"""
    if pairing is Pairing.COUPLED:
        return seed
    return derive_seed(seed, f'method:{index}')


def _matched_config(
    config: ExperimentConfig, target: TargetModel
) -> Tuple[List[MethodSpec], Optional[float]]:
    if config.pilot_steps is None or not any(spec.match_step_size for spec in config.methods):
        return config.methods, None
    srld = [spec for spec in config.methods if spec.method is Method.SRLD]
    if not srld:
        raise ConfigError(
            'step-size matching needs an srld method', 'match_step_sizes', path=config.source
        )
    seed = config.seeds[0]
    theta0 = np.asarray(config.theta0) if config.theta0 else initial_state(target, seed)
    with allure_step('Match step sizes'):
        matched = match_step_sizes(
            target, replace(srld[0].config, seed=seed), config.pilot_steps, theta0
        )
    methods = [
        replace(spec, config=replace(spec.config, step_size=matched))
        if spec.match_step_size
        else spec
        for spec in config.methods
    ]
    return methods, matched


def _run_method(spec: MethodSpec, target, theta0, seed, reference, config) -> MethodOutcome:
    reporting = config.reporting
    try:
        trace = spec.run(target, theta0, seed)
        samples = trace.samples(reporting.keep_every)
        report = evaluate(
            samples,
            reference,
            max_lag=reporting.max_lag,
            eval_points=reporting.eval_points,
            seed=seed,
        )
    except (ChainDiverged, ValueError) as error:
        logger.error('Method %s failed on seed %s: %s', spec.name, seed, error)
        return MethodOutcome(error=str(error))
    moment = check_moment_bound(trace, target, window=min(10000, len(trace)))
    visit = None
    if config.basin is not None:
        visit = first_visit(
            trace, config.basin.center, config.basin.radius, start=trace.burnin_steps
        )
    return MethodOutcome(
        report=report,
        alpha_used=trace.alpha_used,
        bandwidth_used=trace.bandwidth_used,
        first_visit=visit,
        moment_ok=moment.ok,
        trace=trace,
    )


def run_seed(config: ExperimentConfig, target, methods, reference, seed: int) -> SeedOutcome:
    theta0 = np.asarray(config.theta0) if config.theta0 else initial_state(target, seed)
    outcomes = {}
    with allure_step(f'Seed {seed}'):
        for index, spec in enumerate(methods):
            chain_seed = method_seed(config.pairing, seed, index)
            outcomes[spec.name] = _run_method(spec, target, theta0, chain_seed, reference, config)
    logger.info(
        'Seed %s done: %s',
        seed,
        ', '.join(
            f'{name}={"failed" if outcome.failed else "ok"}' for name, outcome in outcomes.items()
        ),
    )
    return SeedOutcome(seed, outcomes)


def _seed_job(job) -> SeedOutcome:
    """Pool entry point: rebuilds the target in the worker and runs one seed"""
    config, methods, reference, seed = job
    return run_seed(config, make_target(config.target), methods, reference, seed)


def worker_count(requested: Optional[int] = None) -> int:
    if requested:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning('Ignoring %s=%r, not an integer', WORKERS_ENV, env)
    return os.cpu_count() or 1


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ComparisonResult:
    """Run every method on every seed and aggregate the metrics.

    Seeds run on a process pool (SRLD_THREADS caps it); results are collected in
    seed order so the outcome does not depend on scheduling. A single worker
    runs the seeds in this process.
    """
    config.validate()
    target = make_target(config.target)
    with allure_step(f'Reference samples for {target.name}'):
        reference = reference_samples(target, config.reference)
    methods, matched = _matched_config(config, target)
    jobs = [(config, methods, reference, seed) for seed in config.seeds]
    processes = min(worker_count(workers), len(jobs))
    if processes == 1:
        per_seed = [_seed_job(job) for job in jobs]
    else:
        logger.info('Running %d seeds on %d processes', len(jobs), processes)
        with multiprocessing.get_context('spawn').Pool(processes=processes) as pool:
            per_seed = pool.map(_seed_job, jobs)
    result = ComparisonResult(
        name=config.name,
        target=config.target.to_dict(),
        methods=[spec.name for spec in methods],
        seeds=list(config.seeds),
        per_seed=per_seed,
        pairing=config.pairing.value,
        matched_step_size=matched,
        keep_every=config.reporting.keep_every,
        basin=config.basin,
    )
    allure_attach_json(result.medians(), name=f'Medians of {config.name}')
    if result.basin is not None:
        allure_attach_json(result.basin_stats(), name=f'Basin visits of {config.name}')
    if result.all_failed:
        logger.error('All seeds failed for %s', config.name)
    return result
