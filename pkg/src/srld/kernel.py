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

"""RBF kernel K(a, b) = exp(-|a - b|^2 / sigma) and the median-trick bandwidth"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial.distance import pdist

from srld.base import DimensionMismatch, as_points

logger = logging.getLogger(__name__)

FALLBACK_SIGMA = 1.0


class InvalidBandwidth(ValueError):
    pass


class BandwidthMode(str, Enum):
    FIXED = 'fixed'
    MEDIAN = 'median'


class BandwidthEstimate(NamedTuple):
    sigma: float
    degenerate: bool = False


@dataclass(frozen=True)
class BandwidthPolicy:
    mode: BandwidthMode = BandwidthMode.MEDIAN
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.mode is BandwidthMode.FIXED:
            check_sigma(self.sigma)

    @classmethod
    def fixed(cls, sigma: float) -> 'BandwidthPolicy':
        return cls(BandwidthMode.FIXED, float(sigma))

    @classmethod
    def median(cls) -> 'BandwidthPolicy':
        return cls(BandwidthMode.MEDIAN)

    @classmethod
    def parse(cls, text) -> 'BandwidthPolicy':
        """Accepts median, fixed:<sigma> or a bare number (read as fixed)"""
        if isinstance(text, BandwidthPolicy):
            return text
        if isinstance(text, (int, float)):
            return cls.fixed(text)
        value = str(text).strip()
        if value == 'median':
            return cls.median()
        mode, _, sigma = value.partition(':')
        if mode != 'fixed' or not sigma:
            raise InvalidBandwidth(f'bandwidth must be "median" or "fixed:<sigma>", got "{text}"')
        try:
            return cls.fixed(float(sigma))
        except ValueError:
            raise InvalidBandwidth(f'bandwidth sigma is not a number: "{sigma}"') from None

    def __str__(self):
        if self.mode is BandwidthMode.FIXED:
            return f'fixed:{self.sigma:g}'
        return 'median'

    def resolve(self, points) -> BandwidthEstimate:
        if self.mode is BandwidthMode.FIXED:
            return BandwidthEstimate(self.sigma)
        return median_bandwidth(points)


def check_sigma(sigma):
    if sigma is None or not sigma > 0 or not math.isfinite(sigma):
        raise InvalidBandwidth(f'sigma must be a positive number, got {sigma}')


def _pair(theta1, theta2):
    a = np.atleast_1d(np.asarray(theta1, dtype=np.float64))
    b = np.atleast_1d(np.asarray(theta2, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionMismatch(a.shape[-1], b.shape[-1], 'theta2')
    return a, b


def rbf(theta1, theta2, sigma: float) -> float:
    check_sigma(sigma)
    a, b = _pair(theta1, theta2)
    diff = a - b
    return float(np.exp(-np.dot(diff, diff) / sigma))


def grad_rbf_arg1(theta1, theta2, sigma: float) -> np.ndarray:
    """Gradient of rbf with respect to its first argument: -(2/sigma)(a - b) K(a, b)"""
    check_sigma(sigma)
    a, b = _pair(theta1, theta2)
    diff = a - b
    return -(2.0 / sigma) * diff * math.exp(-np.dot(diff, diff) / sigma)


def median_bandwidth(points) -> BandwidthEstimate:
    """sigma = med^2 / log(M), med being the median pairwise Euclidean distance.

    Degenerate inputs (a single point, all points equal) fall back to sigma = 1
    with the degenerate flag set.
    """
    matrix = as_points(points)
    count = matrix.shape[0]
    if count < 2:
        logger.debug('Median bandwidth over %d point(s), falling back to %s', count, FALLBACK_SIGMA)
        return BandwidthEstimate(FALLBACK_SIGMA, True)
    med = float(np.median(pdist(matrix)))
    if not med > 0:
        logger.debug('Median pairwise distance is zero, falling back to %s', FALLBACK_SIGMA)
        return BandwidthEstimate(FALLBACK_SIGMA, True)
    return BandwidthEstimate(med * med / math.log(count))
