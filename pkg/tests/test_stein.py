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
import math

import allure
import numpy as np
import pytest

from srld.base import DimensionMismatch
from srld.kernel import InvalidBandwidth
from srld.stein import (
    EmpiricalMeasure,
    EmptyMeasure,
    square_grid,
    stein_identity_residual,
    velocity,
    velocity_batch,
)
from srld.targets import NoExactSampler


def test_single_point_at_query_gives_minus_grad(any_target, rng):
    theta = rng.normal(size=any_target.dim)
    measure = EmpiricalMeasure.of([theta], any_target)
    np.testing.assert_allclose(
        velocity(theta, measure, any_target, 0.8), -any_target.grad(theta), rtol=1e-12
    )


def test_symmetric_pair_around_origin_cancels(gaussian1d):
    measure = EmpiricalMeasure.of([[-0.7], [0.7]], gaussian1d)
    np.testing.assert_allclose(velocity([0.0], measure, gaussian1d, 1.3), [0.0], atol=1e-15)


def test_repulsion_pushes_away_from_past_point(gaussian1d):
    measure = EmpiricalMeasure.of([[0.0]], gaussian1d)
    assert velocity([1.0], measure, gaussian1d, 1.0)[0] == pytest.approx(2.0 * math.exp(-1.0))


def test_velocity_is_linear_in_the_measure(gaussian2d, rng):
    a = EmpiricalMeasure.of(rng.normal(size=(4, 2)), gaussian2d)
    b = EmpiricalMeasure.of(rng.normal(size=(9, 2)), gaussian2d)
    query = rng.normal(size=2)
    joint = velocity(query, a.concat(b), gaussian2d, 1.1)
    mixed = (4 * velocity(query, a, gaussian2d, 1.1) + 9 * velocity(query, b, gaussian2d, 1.1)) / 13
    np.testing.assert_allclose(joint, mixed, rtol=0, atol=1e-12)


def test_batch_matches_single_queries(banana, rng):
    measure = EmpiricalMeasure.of(rng.normal(size=(10, 2)), banana)
    queries = rng.normal(size=(6, 2))
    batch = velocity_batch(queries, measure, banana, 0.9)
    for query, row in zip(queries, batch):
        np.testing.assert_allclose(row, velocity(query, measure, banana, 0.9), atol=1e-12)


def test_cached_gradients_are_used(gaussian2d, rng):
    points = rng.normal(size=(5, 2))
    cached = EmpiricalMeasure(points, gaussian2d.grad_batch(points))
    plain = EmpiricalMeasure(points)
    query = rng.normal(size=2)
    np.testing.assert_array_equal(
        velocity(query, cached, gaussian2d, 1.0), velocity(query, plain, gaussian2d, 1.0)
    )


def test_velocity_errors(gaussian2d):
    measure = EmpiricalMeasure.of([[0.0, 0.0]], gaussian2d)
    with pytest.raises(EmptyMeasure):
        EmpiricalMeasure.of(np.empty((0, 2)))
    with pytest.raises(EmptyMeasure):
        velocity([0.0, 0.0], EmpiricalMeasure(np.empty((0, 2))), gaussian2d, 1.0)
    with pytest.raises(InvalidBandwidth):
        velocity([0.0, 0.0], measure, gaussian2d, 0.0)
    with pytest.raises(DimensionMismatch):
        velocity([0.0, 0.0, 0.0], measure, gaussian2d, 1.0)
    with pytest.raises(DimensionMismatch):
        velocity([0.0], EmpiricalMeasure.of([[0.0]]), gaussian2d, 1.0)


def test_square_grid():
    grid = square_grid(-2.0, 2.0, 5, 2)
    assert grid.shape == (25, 2)
    assert [-2.0, -2.0] in grid.tolist()
    assert [2.0, 2.0] in grid.tolist()
    assert [0.0, 0.0] in grid.tolist()


def test_stein_identity_holds_for_exact_samples(gaussian2d):
    grid = square_grid(-2.0, 2.0, 5, 2)
    with allure.step('Residual with 1e5 exact samples'):
        residual = stein_identity_residual(gaussian2d, 100000, grid, seed=0, sigma=1.0)
    assert residual.shape == (25,)
    assert residual.max() < 0.05


def test_stein_residual_shrinks_per_decade(gaussian2d):
    grid = square_grid(-2.0, 2.0, 5, 2)
    ratios = {(1000, 10000): [], (10000, 100000): []}
    for seed in range(3):
        medians = {
            n: np.median(stein_identity_residual(gaussian2d, n, grid, seed=seed))
            for n in (1000, 10000, 100000)
        }
        for small, large in ratios:
            ratios[(small, large)].append(medians[small] / medians[large])
    for pair, values in ratios.items():
        shrink = math.exp(np.mean(np.log(values)))
        with allure.step(f'Shrink {pair}: {shrink:.3f}'):
            assert math.sqrt(10) / 2 <= shrink <= 2 * math.sqrt(10)


def test_point_mass_far_from_mode_is_not_small(gaussian2d):
    far = np.array([3.0, 3.0])
    measure = EmpiricalMeasure.of([far], gaussian2d)
    residual = np.linalg.norm(velocity(far, measure, gaussian2d, 1.0))
    assert residual == pytest.approx(np.linalg.norm(gaussian2d.grad(far)))


def test_stein_check_preconditions(banana, gaussian2d):
    grid = square_grid()
    with pytest.raises(NoExactSampler):
        stein_identity_residual(banana, 1000, grid, seed=0)
    with pytest.raises(ValueError):
        stein_identity_residual(gaussian2d, 5, grid, seed=0)
