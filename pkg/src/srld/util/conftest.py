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
import pytest


@pytest.fixture(scope="module")
def data():
    return [
        {
            "name": "srld",
            "method": "srld",
            "step_size": 0.001,
            "alpha": 10,
            "total_steps": 50000,
            "bandwidth": "median",
        },
        {
            "name": "langevin",
            "method": "langevin",
            "step_size": 0.001,
            "total_steps": 50000,
            "match_step_size": True,
        },
        {
            "name": "srld_auto",
            "method": "srld",
            "step_size": 0.01,
            "alpha": "auto",
            "total_steps": 20000,
        },
        {
            "name": "skew",
            "method": "general",
            "step_size": 0.001,
            "alpha": 0,
            "total_steps": 20000,
            "dynamics": {"D": [[1, 0], [0, 1]], "Q": [[0, 1], [-1, 0]]},
        },
    ]
