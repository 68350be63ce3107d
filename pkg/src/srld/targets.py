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

"""Sampling targets: potentials V with analytic gradients, exact samplers and moments"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from srld.base import as_vector
from srld.util.rng import generator


class InvalidTargetSpec(ValueError):
    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f'{field_name}: {message}')


class NoExactSampler(Exception):
    def __init__(self, name):
        super().__init__(f'Target "{name}" has no exact sampler')


class TargetKind(str, Enum):
    BANANA2D = 'banana2d'
    GAUSS_MIXTURE = 'gauss_mixture'
    ISOTROPIC_GAUSSIAN = 'isotropic_gaussian'
    BAYES_LINREG = 'bayes_linreg'


# short names accepted on the command line: "gaussian:d=2,var=1"
_ALIASES = {
    'banana': TargetKind.BANANA2D,
    'banana2d': TargetKind.BANANA2D,
    'gaussian': TargetKind.ISOTROPIC_GAUSSIAN,
    'isotropic_gaussian': TargetKind.ISOTROPIC_GAUSSIAN,
    'mixture': TargetKind.GAUSS_MIXTURE,
    'gauss_mixture': TargetKind.GAUSS_MIXTURE,
    'linreg': TargetKind.BAYES_LINREG,
    'bayes_linreg': TargetKind.BAYES_LINREG,
}


@dataclass(frozen=True)
class TargetSpec:
    """Declarative description of a target, as found in experiment configs"""

    kind: TargetKind
    dim: Optional[int] = None
    variance: float = 1.0
    means: Optional[tuple] = None
    weights: Optional[tuple] = None
    design: Optional[tuple] = None
    responses: Optional[tuple] = None
    prior_precision: float = 1.0
    noise_precision: float = 1.0

    @classmethod
    def banana2d(cls) -> 'TargetSpec':
        return cls(TargetKind.BANANA2D, dim=2)

    @classmethod
    def isotropic_gaussian(cls, dim: int, variance: float = 1.0) -> 'TargetSpec':
        return cls(TargetKind.ISOTROPIC_GAUSSIAN, dim=dim, variance=variance)

    @classmethod
    def gauss_mixture(cls, means, weights, variance: float = 1.0) -> 'TargetSpec':
        means = tuple(tuple(float(x) for x in np.atleast_1d(m)) for m in means)
        return cls(
            TargetKind.GAUSS_MIXTURE,
            dim=len(means[0]) if means else None,
            variance=variance,
            means=means,
            weights=tuple(float(w) for w in weights),
        )

    @classmethod
    def symmetric_mixture(cls, dim: int, offset: float = 1.0, variance: float = 1.0):
        """Equal-weight mixture with modes at +offset*1 and -offset*1"""
        mode = [offset] * dim
        return cls.gauss_mixture([mode, [-x for x in mode]], [0.5, 0.5], variance)

    @classmethod
    def bayes_linreg(cls, design, responses, prior_precision=1.0, noise_precision=1.0):
        design = np.atleast_2d(np.asarray(design, dtype=np.float64))
        return cls(
            TargetKind.BAYES_LINREG,
            dim=design.shape[1],
            design=tuple(tuple(row) for row in design.tolist()),
            responses=tuple(float(y) for y in np.ravel(responses)),
            prior_precision=float(prior_precision),
            noise_precision=float(noise_precision),
        )

    @classmethod
    def synthetic_linreg(cls, rows: int = 100, dim: int = 5, seed: int = 0, **precisions):
        """Linear model y = X·1 + noise with standard normal design, drawn from seed"""
        rng = generator(seed, 'linreg')
        design = rng.standard_normal((rows, dim))
        responses = design @ np.ones(dim) + rng.standard_normal(rows)
        return cls.bayes_linreg(design, responses, **precisions)

    @classmethod
    def parse(cls, text: str) -> 'TargetSpec':
        """Build a spec from the short form "name[:key=value,...]"

        banana | gaussian:d=2,var=1 | mixture:d=2,offset=1,var=1 | linreg:n=100,d=5,seed=0
        """
        name, _, args = text.strip().partition(':')
        if name not in _ALIASES:
            raise InvalidTargetSpec('kind', f'unknown target "{name}"')
        params = {}
        for item in filter(None, (part.strip() for part in args.split(','))):
            key, sep, value = item.partition('=')
            if not sep:
                raise InvalidTargetSpec(key, f'expected key=value, got "{item}"')
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise InvalidTargetSpec(key.strip(), f'not a number: "{value}"') from None
        kind = _ALIASES[name]
        dim = int(params.get('d', 2))
        if kind is TargetKind.BANANA2D:
            return cls.banana2d()
        if kind is TargetKind.ISOTROPIC_GAUSSIAN:
            return cls.isotropic_gaussian(dim, params.get('var', 1.0))
        if kind is TargetKind.GAUSS_MIXTURE:
            return cls.symmetric_mixture(dim, params.get('offset', 1.0), params.get('var', 1.0))
        return cls.synthetic_linreg(
            rows=int(params.get('n', 100)),
            dim=int(params.get('d', 5)),
            seed=int(params.get('seed', 0)),
        )

    @classmethod
    def from_dict(cls, data) -> 'TargetSpec':
        if isinstance(data, str):
            return cls.parse(data)
        if not isinstance(data, dict) or 'kind' not in data:
            raise InvalidTargetSpec('kind', 'target must be a string or a mapping with "kind"')
        try:
            kind = TargetKind(_ALIASES.get(data['kind'], data['kind']))
        except ValueError:
            raise InvalidTargetSpec('kind', f'unknown target "{data["kind"]}"') from None
        if kind is TargetKind.BANANA2D:
            return cls.banana2d()
        if kind is TargetKind.ISOTROPIC_GAUSSIAN:
            return cls.isotropic_gaussian(int(data.get('dim', 2)), float(data.get('variance', 1.0)))
        if kind is TargetKind.GAUSS_MIXTURE:
            if 'means' not in data:
                return cls.symmetric_mixture(
                    int(data.get('dim', 2)),
                    float(data.get('offset', 1.0)),
                    float(data.get('variance', 1.0)),
                )
            means = data['means']
            weights = data.get('weights', [1.0 / len(means)] * len(means))
            return cls.gauss_mixture(means, weights, float(data.get('variance', 1.0)))
        precisions = {
            'prior_precision': float(data.get('prior_precision', 1.0)),
            'noise_precision': float(data.get('noise_precision', 1.0)),
        }
        if 'synthetic' in data:
            return cls.synthetic_linreg(**data['synthetic'], **precisions)
        for key in ('design', 'responses'):
            if key not in data:
                raise InvalidTargetSpec(key, 'required for bayes_linreg')
        return cls.bayes_linreg(data['design'], data['responses'], **precisions)

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {'kind': self.kind.value}
        if self.kind is TargetKind.ISOTROPIC_GAUSSIAN:
            result.update(dim=self.dim, variance=self.variance)
        elif self.kind is TargetKind.GAUSS_MIXTURE:
            result.update(
                means=[list(m) for m in self.means],
                weights=list(self.weights),
                variance=self.variance,
            )
        elif self.kind is TargetKind.BAYES_LINREG:
            result.update(
                design=[list(row) for row in self.design],
                responses=list(self.responses),
                prior_precision=self.prior_precision,
                noise_precision=self.noise_precision,
            )
        return result

    @property
    def label(self) -> str:
        if self.kind is TargetKind.BANANA2D:
            return 'banana2d'
        if self.kind is TargetKind.ISOTROPIC_GAUSSIAN:
            return f'isotropic_gaussian(d={self.dim},var={self.variance:g})'
        if self.kind is TargetKind.GAUSS_MIXTURE:
            return f'gauss_mixture(d={self.dim},k={len(self.means)},var={self.variance:g})'
        return f'bayes_linreg(n={len(self.responses)},d={self.dim})'

    def validate(self) -> None:
        if self.kind is TargetKind.BANANA2D:
            if self.dim not in (None, 2):
                raise InvalidTargetSpec('dim', 'banana2d is two-dimensional')
            return
        if self.dim is None or int(self.dim) < 1:
            raise InvalidTargetSpec('dim', f'must be a positive integer, got {self.dim}')
        if self.kind in (TargetKind.ISOTROPIC_GAUSSIAN, TargetKind.GAUSS_MIXTURE):
            if not (self.variance > 0 and math.isfinite(self.variance)):
                raise InvalidTargetSpec('variance', f'must be positive, got {self.variance}')
        if self.kind is TargetKind.GAUSS_MIXTURE:
            if not self.means:
                raise InvalidTargetSpec('means', 'at least one component is required')
            if any(len(m) != self.dim for m in self.means):
                raise InvalidTargetSpec('means', f'every mean must have dimension {self.dim}')
            if self.weights is None or len(self.weights) != len(self.means):
                raise InvalidTargetSpec('weights', 'one weight per component is required')
            if any(not w > 0 for w in self.weights):
                raise InvalidTargetSpec('weights', 'weights must be strictly positive')
            if not math.isclose(sum(self.weights), 1.0, rel_tol=0, abs_tol=1e-9):
                raise InvalidTargetSpec('weights', f'weights sum to {sum(self.weights)}, not 1')
        if self.kind is TargetKind.BAYES_LINREG:
            if self.design is None or self.responses is None:
                raise InvalidTargetSpec('design', 'design matrix and responses are required')
            if len(self.design) != len(self.responses):
                raise InvalidTargetSpec(
                    'responses',
                    f'{len(self.responses)} responses for {len(self.design)} design rows',
                )
            for name in ('prior_precision', 'noise_precision'):
                if not getattr(self, name) > 0:
                    raise InvalidTargetSpec(name, 'must be positive')


@dataclass(frozen=True, eq=False)
class TargetModel:
    """A differentiable potential on R^dim.

    `potential_fn` and `grad_fn` work on a single point (shape (dim,)) as well as
    on a batch (shape (n, dim)), the leading axis being the batch axis.
    """

    name: str
    dim: int
    potential_fn: Callable[[np.ndarray], Any]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    exact_sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None
    analytic_mean: Optional[np.ndarray] = None
    analytic_cov: Optional[np.ndarray] = None
    spec: Optional[TargetSpec] = field(default=None, compare=False)

    def potential(self, theta) -> float:
        return float(self.potential_fn(as_vector(theta, self.dim)))

    def grad(self, theta) -> np.ndarray:
        return self.grad_fn(as_vector(theta, self.dim))

    def grad_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        return self.grad_fn(points)

    @property
    def has_exact_sampler(self) -> bool:
        return self.exact_sampler is not None

    def sample_exact(self, n: int, seed: int) -> np.ndarray:
        if self.exact_sampler is None:
            raise NoExactSampler(self.name)
        if n < 1:
            raise ValueError(f'n must be at least 1, got {n}')
        return self.exact_sampler(int(n), generator(seed, 'exact'))

    @property
    def trace_cov(self) -> Optional[float]:
        if self.analytic_cov is None:
            return None
        return float(np.trace(self.analytic_cov))


def _banana(spec: TargetSpec) -> TargetModel:
    # log-density -θ1^4/10 - (4(θ2+1.2) - θ1^2)^2/2, zero at (0, -1.2)
    def potential(theta):
        t1, t2 = theta[..., 0], theta[..., 1]
        ridge = 4.0 * (t2 + 1.2) - t1**2
        return t1**4 / 10.0 + ridge**2 / 2.0

    def grad(theta):
        t1, t2 = theta[..., 0], theta[..., 1]
        ridge = 4.0 * (t2 + 1.2) - t1**2
        return np.stack([0.4 * t1**3 - 2.0 * t1 * ridge, 4.0 * ridge], axis=-1)

    return TargetModel('banana2d', 2, potential, grad, spec=spec)


def _isotropic_gaussian(spec: TargetSpec) -> TargetModel:
    dim, var = int(spec.dim), float(spec.variance)
    scale = math.sqrt(var)

    def potential(theta):
        return np.sum(theta * theta, axis=-1) / (2.0 * var)

    def grad(theta):
        return theta / var

    def sampler(n, rng):
        return scale * rng.standard_normal((n, dim))

    return TargetModel(
        spec.label,
        dim,
        potential,
        grad,
        exact_sampler=sampler,
        analytic_mean=np.zeros(dim),
        analytic_cov=var * np.eye(dim),
        spec=spec,
    )


def _gauss_mixture(spec: TargetSpec) -> TargetModel:
    means = np.asarray(spec.means, dtype=np.float64)
    log_weights = np.log(np.asarray(spec.weights, dtype=np.float64))
    weights = np.exp(log_weights)
    var = float(spec.variance)
    dim = means.shape[1]

    def log_terms(theta):
        diff = theta[..., None, :] - means
        return log_weights - np.sum(diff * diff, axis=-1) / (2.0 * var), diff

    def potential(theta):
        terms, _ = log_terms(theta)
        return -logsumexp(terms, axis=-1)

    def grad(theta):
        # responsibilities via a stable softmax, no underflow far from the modes
        terms, diff = log_terms(theta)
        resp = softmax(terms, axis=-1)
        return np.sum(resp[..., None] * diff, axis=-2) / var

    def sampler(n, rng):
        components = rng.choice(len(weights), size=n, p=weights / weights.sum())
        return means[components] + math.sqrt(var) * rng.standard_normal((n, dim))

    mean = weights @ means
    centered = means - mean
    cov = var * np.eye(dim) + (centered.T * weights) @ centered
    return TargetModel(
        spec.label,
        dim,
        potential,
        grad,
        exact_sampler=sampler,
        analytic_mean=mean,
        analytic_cov=cov,
        spec=spec,
    )


def _bayes_linreg(spec: TargetSpec) -> TargetModel:
    design = np.asarray(spec.design, dtype=np.float64)
    responses = np.asarray(spec.responses, dtype=np.float64)
    prior, noise = spec.prior_precision, spec.noise_precision
    dim = design.shape[1]
    precision = prior * np.eye(dim) + noise * design.T @ design
    chol = linalg.cholesky(precision, lower=True)
    mean = linalg.cho_solve((chol, True), noise * design.T @ responses)
    cov = linalg.cho_solve((chol, True), np.eye(dim))

    def potential(theta):
        residual = responses - theta @ design.T
        return prior * np.sum(theta * theta, axis=-1) / 2.0 + noise * np.sum(
            residual * residual, axis=-1
        ) / 2.0

    def grad(theta):
        residual = responses - theta @ design.T
        return prior * theta - noise * residual @ design

    def sampler(n, rng):
        # P = L L^T, so mean + L^-T z has covariance P^-1
        z = rng.standard_normal((dim, n))
        return mean + linalg.solve_triangular(chol, z, lower=True, trans='T').T

    return TargetModel(
        spec.label,
        dim,
        potential,
        grad,
        exact_sampler=sampler,
        analytic_mean=mean,
        analytic_cov=cov,
        spec=spec,
    )


_BUILDERS = {
    TargetKind.BANANA2D: _banana,
    TargetKind.ISOTROPIC_GAUSSIAN: _isotropic_gaussian,
    TargetKind.GAUSS_MIXTURE: _gauss_mixture,
    TargetKind.BAYES_LINREG: _bayes_linreg,
}


def make_target(spec) -> TargetModel:
    """Build the TargetModel for a TargetSpec (or its dict / short string form)"""
    if not isinstance(spec, TargetSpec):
        spec = TargetSpec.from_dict(spec)
    spec.validate()
    return _BUILDERS[spec.kind](spec)


def finite_difference_grad(target: TargetModel, theta: Sequence[float], step=1e-6):
    """Central differences of the potential, used to check analytic gradients"""
    theta = as_vector(theta, target.dim)
    result = np.empty(target.dim)
    for i in range(target.dim):
        shift = np.zeros(target.dim)
        shift[i] = step * max(1.0, abs(theta[i]))
        result[i] = (target.potential(theta + shift) - target.potential(theta - shift)) / (
            2.0 * shift[i]
        )
    return result
