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
import json
import math

import numpy as np
import pytest

from srld.dynamics import SamplerConfig
from srld.kernel import BandwidthPolicy
from srld.targets import TargetSpec, make_target


@pytest.fixture(scope="session")
def gaussian2d():
    return make_target(TargetSpec.isotropic_gaussian(2, 1.0))


@pytest.fixture(scope="session")
def gaussian1d():
    return make_target(TargetSpec.isotropic_gaussian(1, 1.0))


@pytest.fixture(scope="session")
def banana():
    return make_target(TargetSpec.banana2d())


@pytest.fixture(scope="session")
def mixture2d():
    return make_target(TargetSpec.symmetric_mixture(2, 1.0, 1.0))


@pytest.fixture(scope="session")
def linreg():
    return make_target(TargetSpec.synthetic_linreg(rows=30, dim=3, seed=4))


@pytest.fixture(scope="session")
def gaussian100():
    return make_target(TargetSpec.isotropic_gaussian(100, 0.5))


@pytest.fixture(scope="session")
def mixture20d():
    return make_target(TargetSpec.symmetric_mixture(20, math.sqrt(2 / 20), 1.0))


@pytest.fixture(params=['gaussian2d', 'banana', 'mixture2d', 'linreg'])
def any_target(request):
    return request.getfixturevalue(request.param)


@pytest.fixture(
    params=['gaussian2d', 'gaussian100', 'banana', 'mixture2d', 'mixture20d', 'linreg']
)
def every_target(request):
    """Every target the presets and configs construct, the 100-D ones included"""
    return request.getfixturevalue(request.param)


@pytest.fixture()
def short_config():
    """Burn-in of 5 * 10 = 50 steps, a few hundred steps in total"""
    return SamplerConfig(
        step_size=0.01,
        total_steps=400,
        alpha=10.0,
        window_size=5,
        thinning=10,
        bandwidth=BandwidthPolicy.median(),
        seed=3,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture()
def experiment_document():
    return {
        "name": "tiny",
        "target": "gaussian:d=2,var=1",
        "methods": [
            {
                "name": "srld",
                "method": "srld",
                "step_size": 0.01,
                "alpha": 10,
                "window_size": 5,
                "thinning": 10,
                "total_steps": 600,
            },
            {
                "name": "langevin",
                "method": "langevin",
                "step_size": 0.01,
                "window_size": 5,
                "thinning": 10,
                "total_steps": 600,
            },
        ],
        "pairing": "coupled-noise",
        "seeds": [0, 1],
        "reference": {"draws": 300, "seed": 0},
        "reporting": {"keep_every": 1, "max_lag": 10, "eval_points": 200},
    }


@pytest.fixture()
def experiment_file(tmp_path, experiment_document):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(experiment_document, indent=2), encoding="utf-8")
    return path
