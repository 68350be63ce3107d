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
# pylint: disable=W0621
from dataclasses import replace

import allure
import numpy as np
import pytest

from srld.base import NonFiniteState
from srld.dynamics import (
    ChainDiverged,
    GeneralDynamicsSpec,
    HistoryWindow,
    InvalidDynamics,
    Method,
    MethodSpec,
    Phase,
    SamplerConfig,
    WindowUnderfilled,
    auto_alpha,
    coupled_runs,
    general_step,
    langevin_step,
    match_step_sizes,
    run_chain,
    srld_step,
    svgd_run,
)
from srld.kernel import BandwidthPolicy
from srld.util.rng import NoiseStream

SKEW = [[0.0, 1.0], [-1.0, 0.0]]


def _filled_window(target, states, window_size, thinning):
    window = HistoryWindow(window_size, thinning, target.dim)
    for state in states:
        state = np.atleast_1d(np.asarray(state, dtype=float))
        window.push(state, target.grad(state))
    return window


def test_langevin_step_examples(gaussian1d, gaussian2d):
    np.testing.assert_array_equal(langevin_step([0.0, 0.0], gaussian2d, 0.5, [0.0, 0.0]), [0, 0])
    assert langevin_step([1.0], gaussian1d, 0.1, [0.0])[0] == pytest.approx(0.9)
    frozen = langevin_step([0.3, -2.0], gaussian2d, 0.0, [5.0, 5.0])
    np.testing.assert_array_equal(frozen, [0.3, -2.0])


def test_langevin_step_rejects_non_finite(gaussian2d):
    with pytest.raises(NonFiniteState):
        langevin_step([np.nan, 0.0], gaussian2d, 0.1, [0.0, 0.0])


def test_srld_step_without_repulsion_is_langevin(banana, rng):
    window = _filled_window(banana, rng.normal(size=(6, 2)), 3, 2)
    cfg = SamplerConfig(step_size=0.01, total_steps=100, alpha=0.0, window_size=3, thinning=2)
    theta, noise = rng.normal(size=2), rng.normal(size=2)
    np.testing.assert_array_equal(
        srld_step(theta, window, banana, cfg, noise), langevin_step(theta, banana, 0.01, noise)
    )


def test_srld_step_with_window_at_query(gaussian1d):
    window = _filled_window(gaussian1d, [[1.0]] * 6, 3, 2)
    cfg = SamplerConfig(
        step_size=0.1,
        total_steps=100,
        alpha=10.0,
        window_size=3,
        thinning=2,
        bandwidth=BandwidthPolicy.fixed(1.0),
    )
    assert srld_step([1.0], window, gaussian1d, cfg, [0.0])[0] == pytest.approx(-0.1)


def test_srld_step_symmetric_window(gaussian1d):
    window = _filled_window(gaussian1d, [[-0.5], [0.5]], 2, 1)
    cfg = SamplerConfig(step_size=0.1, total_steps=100, alpha=10.0, window_size=2, thinning=1)
    assert srld_step([0.0], window, gaussian1d, cfg, [0.0])[0] == pytest.approx(0.0, abs=1e-15)


def test_srld_step_needs_full_window(gaussian1d):
    window = _filled_window(gaussian1d, [[0.1]] * 5, 3, 2)
    cfg = SamplerConfig(step_size=0.1, total_steps=100, window_size=3, thinning=2)
    with pytest.raises(WindowUnderfilled):
        srld_step([0.0], window, gaussian1d, cfg, [0.0])
    with pytest.raises(WindowUnderfilled):
        window.thinned_view()


def test_history_window_thinned_view(rng):
    window = HistoryWindow(window_size=4, thinning=3, dim=2)
    states = rng.normal(size=(40, 2))
    for k, state in enumerate(states):
        window.push(state)
        count = k + 1
        if count >= 12:
            expected = states[[count - j * 3 for j in range(1, 5)]]
            np.testing.assert_array_equal(window.thinned_view().points, expected)
    assert len(window) == 12
    assert window.pushed == 40


def test_general_step_examples(gaussian2d, rng):
    spec = GeneralDynamicsSpec.build(2, curl=SKEW)
    np.testing.assert_allclose(
        general_step([1.0, 0.0], spec, gaussian2d, 0.1, [0.0, 0.0]), [0.9, 0.1], atol=1e-15
    )
    theta, noise = rng.normal(size=2), rng.normal(size=2)
    np.testing.assert_array_equal(
        general_step(theta, GeneralDynamicsSpec.build(2), gaussian2d, 0.05, noise),
        langevin_step(theta, gaussian2d, 0.05, noise),
    )


def test_general_step_scales_noise_by_sqrt_diffusion(gaussian2d):
    spec = GeneralDynamicsSpec.build(2, diffusion=[[4.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(spec.sqrt_diffusion, [[2.0, 0.0], [0.0, 1.0]], atol=1e-12)
    moved = general_step([0.0, 0.0], spec, gaussian2d, 0.5, [1.0, 1.0])
    np.testing.assert_allclose(moved, [2.0, 1.0], atol=1e-12)


@pytest.mark.parametrize(
    "diffusion, curl",
    [
        ([[1.0, 0.5], [0.0, 1.0]], None),
        ([[1.0, 0.0], [0.0, -1.0]], None),
        (None, [[0.0, 1.0], [1.0, 0.0]]),
        ([[1.0]], None),
    ],
)
def test_invalid_dynamics(diffusion, curl):
    with pytest.raises(InvalidDynamics):
        GeneralDynamicsSpec.build(2, diffusion, curl)


def test_reduction_to_langevin(any_target, short_config):
    theta0 = np.full(any_target.dim, 0.5)
    plain = run_chain(Method.LANGEVIN, any_target, short_config, theta0)
    with allure.step('srld with alpha=0'):
        srld = run_chain(Method.SRLD, any_target, replace(short_config, alpha=0.0), theta0)
        assert srld.same_as(plain)
    with allure.step('general with D=I, Q=0, alpha=0'):
        general = run_chain(Method.GENERAL, any_target, replace(short_config, alpha=0.0), theta0)
        assert general.same_as(plain)


def test_run_chain_is_deterministic(banana, short_config):
    first = run_chain('srld', banana, short_config, [0.0, 0.0])
    second = run_chain('srld', banana, short_config, [0.0, 0.0])
    assert first.same_as(second)
    third = run_chain('srld', banana, replace(short_config, seed=4), [0.0, 0.0])
    assert not third.same_as(first)


def test_trace_layout(gaussian2d, short_config):
    trace = run_chain(Method.SRLD, gaussian2d, short_config, [1.0, -1.0])
    burnin = short_config.burnin_steps
    assert len(trace) == short_config.total_steps
    np.testing.assert_array_equal(trace.states[0], [1.0, -1.0])
    assert trace.phases[:burnin] == [Phase.BURNIN] * burnin
    assert trace.phases[burnin:] == [Phase.REPULSIVE] * (len(trace) - burnin)
    assert trace.first_iteration(Phase.REPULSIVE) == burnin
    assert np.all(np.isnan(trace.bandwidths[:burnin]))
    assert np.all(trace.bandwidths[burnin:] > 0)
    assert trace.samples().shape == (len(trace) - burnin, 2)
    assert trace.alpha_used == short_config.alpha


def test_plain_phase_tags_for_langevin(gaussian2d, short_config):
    trace = run_chain(Method.LANGEVIN, gaussian2d, short_config, [0.0, 0.0])
    assert trace.first_iteration(Phase.REPULSIVE) is None
    assert trace.first_iteration(Phase.PLAIN) == short_config.burnin_steps


def test_chain_replays_from_window(banana, short_config):
    """Every repulsive step equals srld_step on the window built from earlier trace entries"""
    trace = run_chain(Method.SRLD, banana, short_config, [0.2, -1.0])
    noise = NoiseStream(short_config.seed, 2)
    kicks = np.array([noise.next() for _ in range(len(trace))])
    for k in (short_config.burnin_steps, short_config.burnin_steps + 17, len(trace) - 2):
        window = _filled_window(banana, trace.states[:k], 5, 10)
        stepped = srld_step(trace.states[k], window, banana, short_config, kicks[k])
        np.testing.assert_allclose(stepped, trace.states[k + 1], rtol=0, atol=1e-12)


def test_chain_divergence_is_reported(gaussian2d):
    cfg = SamplerConfig(step_size=5.0, total_steps=5000, alpha=0.0, window_size=1, thinning=1)
    with pytest.raises(ChainDiverged) as error:
        with np.errstate(over='ignore', invalid='ignore'):
            run_chain(Method.LANGEVIN, gaussian2d, cfg, [1.0, 1.0])
    assert 0 < error.value.iteration < 5000


def test_srld_needs_steps_after_burnin(gaussian2d):
    cfg = SamplerConfig(step_size=0.01, total_steps=1000)
    with pytest.raises(ValueError):
        run_chain(Method.SRLD, gaussian2d, cfg, [0.0, 0.0])


def test_auto_alpha_at_mode_is_degenerate(gaussian2d, short_config):
    trace = run_chain(Method.SRLD, gaussian2d, replace(short_config, step_size=0.0), [0.0, 0.0])
    estimate = auto_alpha(trace, gaussian2d)
    assert estimate.alpha == 0.0
    assert estimate.degenerate


def test_auto_alpha_used_by_run(banana, short_config):
    trace = run_chain(Method.SRLD, banana, replace(short_config, alpha=None), [0.0, 0.0])
    estimate = auto_alpha(trace, banana)
    assert not estimate.degenerate
    assert estimate.alpha > 0
    assert trace.alpha_used == estimate.alpha


def test_coupled_runs(banana, short_config):
    srld = MethodSpec('srld', Method.SRLD, short_config)
    plain = MethodSpec('langevin', Method.LANGEVIN, short_config)
    reduced = MethodSpec('srld0', Method.SRLD, replace(short_config, alpha=0.0))
    burnin = short_config.burnin_steps
    with allure.step('Same spec twice'):
        a, b = coupled_runs(banana, srld, srld, [0.0, 0.0], shared_seed=11)
        assert a.same_as(b)
    with allure.step('alpha=0 against langevin'):
        a, b = coupled_runs(banana, reduced, plain, [0.0, 0.0], shared_seed=11)
        assert a.same_as(b)
    with allure.step('Shared prefix up to the end of burn-in'):
        a, b = coupled_runs(banana, srld, plain, [0.0, 0.0], shared_seed=11)
        np.testing.assert_array_equal(a.states[: burnin + 1], b.states[: burnin + 1])
        assert not np.array_equal(a.states[burnin + 1], b.states[burnin + 1])


def test_coupled_runs_need_equal_lengths(banana, short_config):
    a = MethodSpec('a', Method.SRLD, short_config)
    b = MethodSpec('b', Method.LANGEVIN, replace(short_config, total_steps=500))
    with pytest.raises(ValueError):
        coupled_runs(banana, a, b, [0.0, 0.0], shared_seed=0)


def test_match_step_sizes(banana, short_config):
    unchanged = match_step_sizes(banana, replace(short_config, alpha=0.0), 1000)
    assert unchanged == short_config.step_size
    matched = match_step_sizes(banana, short_config, 1000, theta0=[0.0, 0.0])
    assert matched > 0
    assert matched != short_config.step_size
    with pytest.raises(ValueError):
        match_step_sizes(banana, short_config, 999)


def test_svgd_single_particle_is_gradient_descent(gaussian1d):
    final = svgd_run(gaussian1d, 1, 3, 0.1, seed=0, initial=[[2.0]])
    assert final[0, 0] == pytest.approx(2.0 * 0.9**3)


def test_svgd_zero_step_keeps_particles(banana, rng):
    initial = rng.normal(size=(8, 2))
    np.testing.assert_array_equal(svgd_run(banana, 8, 10, 0.0, initial=initial), initial)


def test_svgd_fits_standard_normal(gaussian1d):
    particles = svgd_run(gaussian1d, 50, 2000, 0.05, seed=1)
    assert abs(particles.mean()) < 0.1
    assert 0.8 <= particles.var() <= 1.2
