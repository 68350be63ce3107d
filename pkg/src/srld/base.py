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

import json
from contextlib import contextmanager

import numpy as np

# If the harness runs under allure-pytest, experiment stages are reported as allure steps.
# Outside of testing allure is useless, so everything below degrades to no-ops without it.
ALLURE = True
try:
    import allure
except ImportError:
    ALLURE = False


@contextmanager
def dummy_context(*args, **kwargs):
    yield


def allure_step(text):
    if ALLURE:
        return allure.step(text)
    return dummy_context(text)


def allure_attach_json(body, name):
    if ALLURE:
        allure.attach(
            json.dumps(body, indent=2),
            name=name,
            attachment_type=allure.attachment_type.JSON,
        )


class DimensionMismatch(ValueError):
    def __init__(self, expected, got, what='theta'):
        self.expected = expected
        self.got = got
        super().__init__(f'{what} has dimension {got}, expected {expected}')


class NonFiniteState(ValueError):
    """NaN or Inf handed to a step function"""


class DegenerateEstimate(ValueError):
    """Ratio estimator without a usable denominator"""


def as_vector(theta, dim, what='theta') -> np.ndarray:
    """Return theta as a float64 vector of length dim or raise DimensionMismatch"""
    vector = np.asarray(theta, dtype=np.float64)
    if vector.ndim == 0:
        vector = vector.reshape(1)
    if vector.ndim != 1 or vector.shape[0] != dim:
        raise DimensionMismatch(dim, vector.shape[-1] if vector.ndim else 1, what)
    return vector


def as_points(points, dim=None, what='points') -> np.ndarray:
    """Return a (count x dim) float64 matrix; 1-D input is read as count scalars"""
    matrix = np.asarray(points, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise ValueError(f'{what} must be a matrix, got shape {matrix.shape}')
    if dim is not None and matrix.shape[1] != dim:
        raise DimensionMismatch(dim, matrix.shape[1], what)
    return matrix
