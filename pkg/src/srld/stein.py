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

"""Stein variational velocity field over an empirical measure.

    g(q; rho) = 1/M sum_j [ -K(theta_j, q) grad V(theta_j) + grad_theta K(theta_j, q) ]

For the RBF kernel grad_theta K(theta, q) = (2/sigma)(q - theta) K(theta, q), which
pushes the query q away from every point of the measure.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from srld.base import DimensionMismatch, as_points, as_vector
from srld.kernel import check_sigma
from srld.targets import NoExactSampler, TargetModel


class EmptyMeasure(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform measure over `points` (M x d).

    `grads` optionally caches grad V at every point; chains fill it from the
    gradients they already computed when the points were current states.
    """

    points: np.ndarray
    grads: Optional[np.ndarray] = None

    @classmethod
    def of(cls, points, target: Optional[TargetModel] = None) -> 'EmpiricalMeasure':
        matrix = as_points(points, target.dim if target is not None else None)
        if matrix.shape[0] == 0:
            raise EmptyMeasure('Empirical measure needs at least one point')
        grads = target.grad_batch(matrix) if target is not None else None
        return cls(matrix, grads)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def concat(self, other: 'EmpiricalMeasure') -> 'EmpiricalMeasure':
        if other.dim != self.dim:
            raise DimensionMismatch(self.dim, other.dim, 'measure')
        grads = None
        if self.grads is not None and other.grads is not None:
            grads = np.vstack([self.grads, other.grads])
        return EmpiricalMeasure(np.vstack([self.points, other.points]), grads)

    def gradients(self, target: TargetModel) -> np.ndarray:
        if self.grads is not None:
            return self.grads
        return target.grad_batch(self.points)


def _checked(measure: EmpiricalMeasure, target: TargetModel, sigma: float):
    check_sigma(sigma)
    if measure.count == 0:
        raise EmptyMeasure('Empirical measure needs at least one point')
    if measure.dim != target.dim:
        raise DimensionMismatch(target.dim, measure.dim, 'measure')


def velocity(query, measure: EmpiricalMeasure, target: TargetModel, sigma: float) -> np.ndarray:
    """g(query; measure) in one O(M d) pass"""
    _checked(measure, target, sigma)
    query = as_vector(query, target.dim, 'query')
    diff = query - measure.points
    weights = np.exp(-np.einsum('ij,ij->i', diff, diff) / sigma)
    confining = -(weights @ measure.gradients(target))
    repulsive = (2.0 / sigma) * (weights @ diff)
    return (confining + repulsive) / measure.count


def velocity_batch(queries, measure: EmpiricalMeasure, target: TargetModel, sigma: float):
    """g at every row of queries (Q x d), returns Q x d"""
    _checked(measure, target, sigma)
    queries = as_points(queries, target.dim, 'queries')
    weights = np.exp(-cdist(queries, measure.points, 'sqeuclidean') / sigma)
    confining = -(weights @ measure.gradients(target))
    repulsive = (2.0 / sigma) * (weights.sum(axis=1)[:, None] * queries - weights @ measure.points)
    return (confining + repulsive) / measure.count


def square_grid(low: float = -2.0, high: float = 2.0, per_axis: int = 5, dim: int = 2):
    """Regular grid with per_axis points per coordinate (per_axis ** dim rows)"""
    axis = np.linspace(low, high, per_axis)
    mesh = np.meshgrid(*([axis] * dim), indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


def stein_identity_residual(target: TargetModel, n: int, grid, seed: int, sigma: float = 1.0):
    """|g(q; exact samples)| at every grid point, expected to decay like n^-1/2"""
    if not target.has_exact_sampler:
        raise NoExactSampler(target.name)
    if n < 10:
        raise ValueError(f'Stein identity check needs at least 10 samples, got {n}')
    measure = EmpiricalMeasure.of(target.sample_exact(n, seed), target)
    return np.linalg.norm(velocity_batch(grid, measure, target, sigma), axis=1)
