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

"""Chain steppers and full runs.

Langevin:  theta + eta * (-grad V) + sqrt(2 eta) e
SRLD:      Langevin for the first M * c_eta iterations, then
           theta + eta * (-grad V + alpha * g(theta; past window)) + sqrt(2 eta) e
General:   theta - eta * ((D + Q) grad V - Gamma) [+ eta * alpha * g] + sqrt(2 eta) sqrt(D) e

One standard normal vector is consumed per iteration whatever the branch, so
chains built from the same seed share their noise exactly.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from srld.base import DegenerateEstimate, NonFiniteState, as_points, as_vector
from srld.kernel import BandwidthPolicy
from srld.stein import EmpiricalMeasure, velocity, velocity_batch
from srld.targets import TargetModel
from srld.util.rng import NoiseStream, generator

# Init logger
logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 10.0
DEFAULT_WINDOW_SIZE = 10
DEFAULT_THINNING = 100


class ChainDiverged(Exception):
    def __init__(self, iteration, message='non-finite state'):
        self.iteration = iteration
        super().__init__(f'Chain diverged at iteration {iteration}: {message}')


class WindowUnderfilled(Exception):
    """Repulsive step requested before the history window holds M * c_eta states"""


class InvalidDynamics(ValueError):
    pass


class Method(str, Enum):
    LANGEVIN = 'langevin'
    SRLD = 'srld'
    GENERAL = 'general'


class Phase(str, Enum):
    BURNIN = 'burnin'
    REPULSIVE = 'repulsive'
    PLAIN = 'plain'


_PHASES = (Phase.BURNIN, Phase.REPULSIVE, Phase.PLAIN)


@dataclass(frozen=True)
class SamplerConfig:
    """Hyper-parameters of one chain. alpha=None estimates alpha from the burn-in."""

    step_size: float
    total_steps: int
    alpha: Optional[float] = DEFAULT_ALPHA
    window_size: int = DEFAULT_WINDOW_SIZE
    thinning: int = DEFAULT_THINNING
    bandwidth: BandwidthPolicy = field(default_factory=BandwidthPolicy.median)
    seed: int = 0
    keep_every: int = 1

    @property
    def burnin_steps(self) -> int:
        return self.window_size * self.thinning

    def validate(self, method: Method = Method.SRLD) -> None:
        if not (self.step_size >= 0 and math.isfinite(self.step_size)):
            raise ValueError(f'step_size must be a non-negative number, got {self.step_size}')
        if self.alpha is not None and not self.alpha >= 0:
            raise ValueError(f'alpha must be non-negative, got {self.alpha}')
        for name in ('total_steps', 'window_size', 'thinning', 'keep_every'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f'{name} must be a positive integer, got {value}')
        if method is Method.SRLD and self.total_steps <= self.burnin_steps:
            raise ValueError(
                f'total_steps={self.total_steps} must exceed window_size * thinning='
                f'{self.burnin_steps}, otherwise no repulsive step ever happens'
            )


class HistoryWindow:
    """Ring buffer of the last M * c_eta states (and their gradients).

    After k pushes the thinned view is {theta_(k - j c_eta) : j = 1..M}.
    """

    def __init__(self, window_size: int, thinning: int, dim: int):
        self.window_size = window_size
        self.thinning = thinning
        self.capacity = window_size * thinning
        self._states = np.zeros((self.capacity, dim))
        self._grads = np.zeros((self.capacity, dim))
        self._with_grads = True
        self._count = 0
        self._offsets = thinning * np.arange(1, window_size + 1)

    def __len__(self):
        return min(self._count, self.capacity)

    @property
    def pushed(self) -> int:
        return self._count

    @property
    def is_full(self) -> bool:
        return self._count >= self.capacity

    def push(self, state, grad=None) -> None:
        slot = self._count % self.capacity
        self._states[slot] = state
        if grad is None:
            self._with_grads = False
        else:
            self._grads[slot] = grad
        self._count += 1

    def thinned_view(self) -> EmpiricalMeasure:
        if not self.is_full:
            raise WindowUnderfilled(
                f'History window holds {self._count} of {self.capacity} states'
            )
        slots = (self._count - self._offsets) % self.capacity
        grads = self._grads[slots] if self._with_grads else None
        return EmpiricalMeasure(self._states[slots], grads)


@dataclass(frozen=True, eq=False)
class GeneralDynamicsSpec:
    """Constant diffusion D (symmetric PSD) and curl Q (skew-symmetric); Gamma is zero"""

    diffusion: np.ndarray
    curl: np.ndarray
    drift_matrix: np.ndarray = field(init=False, repr=False)
    sqrt_diffusion: np.ndarray = field(init=False, repr=False)
    is_standard: bool = field(init=False, repr=False)

    def __post_init__(self):
        d = np.array(self.diffusion, dtype=np.float64, ndmin=2)
        q = np.array(self.curl, dtype=np.float64, ndmin=2)
        if d.shape[0] != d.shape[1] or q.shape != d.shape:
            raise InvalidDynamics(f'D {d.shape} and Q {q.shape} must be equal square matrices')
        if not np.allclose(d, d.T, rtol=0, atol=1e-12):
            raise InvalidDynamics('D must be symmetric')
        if not np.allclose(q, -q.T, rtol=0, atol=1e-12):
            raise InvalidDynamics('Q must be skew-symmetric')
        eigenvalues, eigenvectors = np.linalg.eigh(d)
        if eigenvalues.min() < -1e-10 * max(1.0, abs(eigenvalues).max()):
            raise InvalidDynamics(
                f'D is not positive semi-definite (eigenvalue {eigenvalues.min()})'
            )
        roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
        object.__setattr__(self, 'diffusion', d)
        object.__setattr__(self, 'curl', q)
        object.__setattr__(self, 'drift_matrix', d + q)
        object.__setattr__(self, 'sqrt_diffusion', (eigenvectors * roots) @ eigenvectors.T)
        object.__setattr__(
            self, 'is_standard', bool(np.array_equal(d, np.eye(len(d))) and not q.any())
        )

    @classmethod
    def build(cls, dim: int, diffusion=None, curl=None) -> 'GeneralDynamicsSpec':
        return cls(
            np.eye(dim) if diffusion is None else diffusion,
            np.zeros((dim, dim)) if curl is None else curl,
        )

    @property
    def dim(self) -> int:
        return self.diffusion.shape[0]

    def drift(self, grad: np.ndarray) -> np.ndarray:
        if self.is_standard:
            return -grad
        return -(self.drift_matrix @ grad)

    def diffuse(self, noise: np.ndarray) -> np.ndarray:
        if self.is_standard:
            return noise
        return self.sqrt_diffusion @ noise


def _advance(theta, drift, step_size, noise):
    return theta + step_size * drift + math.sqrt(2.0 * step_size) * noise


def _finite(theta, what='theta'):
    if not np.all(np.isfinite(theta)):
        raise NonFiniteState(f'{what} is not finite: {theta}')


def langevin_step(theta, target: TargetModel, step_size: float, noise) -> np.ndarray:
    theta = as_vector(theta, target.dim)
    _finite(theta)
    return _advance(theta, -target.grad_fn(theta), step_size, as_vector(noise, target.dim, 'noise'))


def repulsive_velocity(
    theta, window: HistoryWindow, target: TargetModel, bandwidth: BandwidthPolicy
) -> Tuple[np.ndarray, float]:
    """g(theta; thinned window) and the bandwidth it was computed with"""
    measure = window.thinned_view()
    sigma = bandwidth.resolve(measure.points).sigma
    return velocity(theta, measure, target, sigma), sigma


def srld_step(theta, window: HistoryWindow, target: TargetModel, cfg: SamplerConfig, noise):
    theta = as_vector(theta, target.dim)
    _finite(theta)
    noise = as_vector(noise, target.dim, 'noise')
    drift = -target.grad_fn(theta)
    if not window.is_full:
        raise WindowUnderfilled(f'History window holds {len(window)} of {window.capacity} states')
    if cfg.alpha is None:
        raise ValueError('srld_step needs a resolved alpha, estimate it with auto_alpha first')
    if cfg.alpha:
        push, _ = repulsive_velocity(theta, window, target, cfg.bandwidth)
        drift = drift + cfg.alpha * push
    return _advance(theta, drift, cfg.step_size, noise)


def general_step(  # pylint: disable=too-many-arguments
    theta,
    spec: GeneralDynamicsSpec,
    target: TargetModel,
    step_size: float,
    noise,
    alpha: float = 0.0,
    window: Optional[HistoryWindow] = None,
    bandwidth: Optional[BandwidthPolicy] = None,
) -> np.ndarray:
    theta = as_vector(theta, target.dim)
    _finite(theta)
    if spec.dim != target.dim:
        raise InvalidDynamics(f'dynamics are {spec.dim}-dimensional, target is {target.dim}')
    drift = spec.drift(target.grad_fn(theta))
    if window is not None and alpha:
        push, _ = repulsive_velocity(theta, window, target, bandwidth or BandwidthPolicy.median())
        drift = drift + alpha * push
    return _advance(theta, drift, step_size, spec.diffuse(as_vector(noise, target.dim, 'noise')))


@dataclass(eq=False)
class Trace:
    """Entry k holds theta_k and the metadata of the step applied to it; final_state is theta_T"""

    method: Method
    config: SamplerConfig
    states: np.ndarray
    phase_codes: np.ndarray
    bandwidths: np.ndarray
    grad_norms: np.ndarray
    velocity_norms: np.ndarray
    drift_norms: np.ndarray
    final_state: np.ndarray
    alpha_used: Optional[float] = None

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def iterations(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def phases(self) -> List[Phase]:
        return [_PHASES[code] for code in self.phase_codes]

    @property
    def burnin_steps(self) -> int:
        return min(self.config.burnin_steps, len(self))

    def first_iteration(self, phase: Phase) -> Optional[int]:
        hits = np.flatnonzero(self.phase_codes == _PHASES.index(phase))
        return int(hits[0]) if hits.size else None

    def samples(self, keep_every: Optional[int] = None, include_burnin: bool = False):
        start = 0 if include_burnin else self.burnin_steps
        return self.states[start :: keep_every or self.config.keep_every]

    def kept(self, keep_every: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Iteration indexes and states of every keep_every-th entry, burn-in included"""
        step = keep_every or self.config.keep_every
        return self.iterations[::step], self.states[::step]

    @property
    def bandwidth_used(self) -> Optional[float]:
        used = self.bandwidths[np.isfinite(self.bandwidths)]
        return float(np.median(used)) if used.size else None

    def same_as(self, other: 'Trace') -> bool:
        return all(
            np.array_equal(getattr(self, name), getattr(other, name), equal_nan=True)
            for name in (
                'states',
                'phase_codes',
                'bandwidths',
                'grad_norms',
                'velocity_norms',
                'drift_norms',
                'final_state',
            )
        )


def initial_state(target: TargetModel, seed: int) -> np.ndarray:
    """Standard normal starting point drawn from its own stream of seed"""
    return generator(seed, 'init').standard_normal(target.dim)


def run_chain(  # pylint: disable=too-many-locals,too-many-statements
    method,
    target: TargetModel,
    cfg: SamplerConfig,
    theta0,
    dynamics: Optional[GeneralDynamicsSpec] = None,
) -> Trace:
    method = Method(method)
    cfg.validate(method)
    if method is Method.GENERAL:
        dynamics = dynamics or GeneralDynamicsSpec.build(target.dim)
        if dynamics.dim != target.dim:
            raise InvalidDynamics(
                f'dynamics are {dynamics.dim}-dimensional, target is {target.dim}'
            )
    theta = as_vector(theta0, target.dim, 'theta0').copy()
    _finite(theta, 'theta0')

    steps, burnin, dim = cfg.total_steps, cfg.burnin_steps, target.dim
    states = np.empty((steps, dim))
    phase_codes = np.zeros(steps, dtype=np.int8)
    bandwidths = np.full(steps, np.nan)
    grad_norms = np.empty(steps)
    velocity_norms = np.full(steps, np.nan)
    drift_norms = np.empty(steps)

    window = HistoryWindow(cfg.window_size, cfg.thinning, dim)
    noise = NoiseStream(cfg.seed, dim)
    eta, root = cfg.step_size, math.sqrt(2.0 * cfg.step_size)
    alpha = cfg.alpha if method is not Method.LANGEVIN else 0.0
    grad_fn = target.grad_fn

    for k in range(steps):
        grad = grad_fn(theta)
        states[k] = theta
        grad_norms[k] = math.sqrt(grad @ grad)
        if not math.isfinite(grad_norms[k]):
            raise ChainDiverged(k, 'non-finite gradient')
        drift = dynamics.drift(grad) if dynamics is not None else -grad
        if k >= burnin:
            if alpha is None:
                alpha = _alpha_from_states(
                    states[: k + 1], target, cfg.bandwidth, cfg.window_size, cfg.thinning
                ).alpha
                logger.info('Estimated alpha=%.4g from %d burn-in states', alpha, k)
            if alpha:
                push, sigma = repulsive_velocity(theta, window, target, cfg.bandwidth)
                drift = drift + alpha * push
                bandwidths[k] = sigma
                velocity_norms[k] = math.sqrt(push @ push)
                phase_codes[k] = 1
            else:
                phase_codes[k] = 2
        drift_norms[k] = math.sqrt(drift @ drift)
        kick = noise.next()
        if dynamics is not None:
            kick = dynamics.diffuse(kick)
        window.push(theta, grad)
        theta = theta + eta * drift + root * kick
        if not np.all(np.isfinite(theta)):
            logger.error('%s chain diverged at iteration %d', method.value, k + 1)
            raise ChainDiverged(k + 1)

    return Trace(
        method=method,
        config=cfg,
        states=states,
        phase_codes=phase_codes,
        bandwidths=bandwidths,
        grad_norms=grad_norms,
        velocity_norms=velocity_norms,
        drift_norms=drift_norms,
        final_state=theta,
        alpha_used=alpha if steps > burnin else None,
    )


def svgd_run(  # pylint: disable=too-many-arguments
    target: TargetModel,
    n_particles: int,
    steps: int,
    step_size: float,
    bandwidth: Optional[BandwidthPolicy] = None,
    seed: int = 0,
    initial=None,
) -> np.ndarray:
    """Deterministic particle update theta_i += eta * g(theta_i; current particles)"""
    if n_particles < 1:
        raise ValueError(f'n_particles must be at least 1, got {n_particles}')
    bandwidth = bandwidth or BandwidthPolicy.median()
    if initial is None:
        particles = generator(seed, 'init').standard_normal((n_particles, target.dim))
    else:
        particles = as_points(initial, target.dim, 'initial').copy()
    for iteration in range(steps):
        measure = EmpiricalMeasure(particles, target.grad_batch(particles))
        sigma = bandwidth.resolve(particles).sigma
        particles = particles + step_size * velocity_batch(particles, measure, target, sigma)
        if not np.all(np.isfinite(particles)):
            raise ChainDiverged(iteration + 1, 'non-finite particle')
    return particles


class AlphaEstimate(NamedTuple):
    alpha: float
    degenerate: bool = False


def _alpha_from_states(states, target, bandwidth, window_size, thinning) -> AlphaEstimate:
    grads = target.grad_batch(states)
    offsets = thinning * np.arange(1, window_size + 1)
    numerator = denominator = 0.0
    for k in range(1, states.shape[0]):
        past = k - offsets
        past = past[past >= 0]
        measure = EmpiricalMeasure(states[past], grads[past])
        sigma = bandwidth.resolve(measure.points).sigma
        push = velocity(states[k], measure, target, sigma)
        numerator += float(np.linalg.norm(grads[k]))
        denominator += float(np.linalg.norm(push))
    if numerator == 0.0:
        logger.warning('Burn-in gradients are all zero, alpha estimate is degenerate')
        return AlphaEstimate(0.0, True)
    if denominator == 0.0:
        raise DegenerateEstimate('Burn-in velocities are all zero, set a fixed alpha instead')
    return AlphaEstimate(numerator / denominator)


def auto_alpha(
    burnin: Trace, target: TargetModel, bandwidth: Optional[BandwidthPolicy] = None
) -> AlphaEstimate:
    """alpha ~ sum |grad V(theta_k)| / sum |g(theta_k; thinned past)| over the burn-in.

    Early burn-in states see a partial window (only the past states that exist).
    """
    cfg = burnin.config
    if len(burnin) < cfg.burnin_steps:
        raise ValueError(f'Trace holds {len(burnin)} states, burn-in needs {cfg.burnin_steps}')
    return _alpha_from_states(
        burnin.states[: cfg.burnin_steps + 1],
        target,
        bandwidth or cfg.bandwidth,
        cfg.window_size,
        cfg.thinning,
    )


@dataclass(frozen=True, eq=False)
class MethodSpec:
    """A named chain recipe as listed in an experiment"""

    name: str
    method: Method
    config: SamplerConfig
    dynamics: Optional[GeneralDynamicsSpec] = None
    match_step_size: bool = False

    def run(self, target: TargetModel, theta0, seed: Optional[int] = None) -> Trace:
        cfg = self.config if seed is None else replace(self.config, seed=seed)
        return run_chain(self.method, target, cfg, theta0, self.dynamics)


def coupled_runs(
    target: TargetModel, spec_a: MethodSpec, spec_b: MethodSpec, theta0, shared_seed: int
) -> Tuple[Trace, Trace]:
    """Run two chains from the same theta0 on the identical noise sequence"""
    if spec_a.config.total_steps != spec_b.config.total_steps:
        raise ValueError(
            f'Coupled chains need equal total_steps, got {spec_a.config.total_steps} '
            f'and {spec_b.config.total_steps}'
        )
    return spec_a.run(target, theta0, shared_seed), spec_b.run(target, theta0, shared_seed)


def match_step_sizes(
    target: TargetModel, cfg_srld: SamplerConfig, pilot_steps: int, theta0=None
) -> float:
    """Langevin step size giving the same mean drift per step as the SRLD chain.

    Runs an SRLD pilot and returns eta_srld * mean|-grad V + alpha g| / mean|grad V|
    over its post-burn-in steps.
    """
    if pilot_steps < 1000:
        raise ValueError(f'pilot_steps must be at least 1000, got {pilot_steps}')
    pilot_cfg = replace(cfg_srld, total_steps=int(pilot_steps))
    if theta0 is None:
        theta0 = initial_state(target, cfg_srld.seed)
    pilot = run_chain(Method.SRLD, target, pilot_cfg, theta0)
    post = slice(pilot.burnin_steps, None)
    drift = float(np.mean(pilot.drift_norms[post]))
    grad = float(np.mean(pilot.grad_norms[post]))
    if grad == 0.0 or drift == 0.0:
        raise DegenerateEstimate('Pilot run has zero mean drift, cannot match step sizes')
    matched = cfg_srld.step_size * (drift / grad)
    logger.info(
        'Matched Langevin step size %.4g to SRLD step size %.4g (drift ratio %.4g)',
        matched,
        cfg_srld.step_size,
        drift / grad,
    )
    return matched
