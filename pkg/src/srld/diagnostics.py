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

"""Sample-quality metrics: MMD, Wasserstein-1, ESS, autocorrelation and moment monitoring"""

import logging
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
from scipy import signal, stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from srld.base import DimensionMismatch, as_points
from srld.kernel import check_sigma, median_bandwidth
from srld.util.rng import generator

# Init logger
logger = logging.getLogger(__name__)

EXACT_W1_CUTOFF = 512
SLICED_PROJECTIONS = 128
MOMENT_TRACE_POINTS = 100


class ZeroVariance(ValueError):
    pass


class UnequalSampleCounts(ValueError):
    def __init__(self, left, right):
        super().__init__(
            f'Exact Wasserstein-1 needs equal sample counts, got {left} and {right}; '
            'use mode="sliced" for unequal sets'
        )


def _pair(x, y):
    x, y = as_points(x, what='X'), as_points(y, what='Y')
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(x.shape[1], y.shape[1], 'Y')
    return x, y


def pooled_bandwidth(x, y) -> float:
    """Median-heuristic sigma over the pooled X and Y"""
    return median_bandwidth(np.vstack(_pair(x, y))).sigma


def mmd2(x, y, sigma: Optional[float] = None, mode: str = 'biased') -> float:
    """Squared MMD with the RBF kernel exp(-|a - b|^2 / sigma).

    biased: mean over all pairs, diagonals included (clipped at zero).
    unbiased: diagonal-free U-statistic, may be negative.
    """
    x, y = _pair(x, y)
    if sigma is None:
        sigma = pooled_bandwidth(x, y)
    check_sigma(sigma)
    kxx = np.exp(-cdist(x, x, 'sqeuclidean') / sigma)
    kyy = np.exp(-cdist(y, y, 'sqeuclidean') / sigma)
    kxy = np.exp(-cdist(x, y, 'sqeuclidean') / sigma)
    if mode == 'biased':
        return max(0.0, float(kxx.mean() + kyy.mean() - 2.0 * kxy.mean()))
    if mode != 'unbiased':
        raise ValueError(f'mode must be "biased" or "unbiased", got "{mode}"')
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise ValueError(f'Unbiased MMD needs at least 2 points per set, got {n} and {m}')
    xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(xx + yy - 2.0 * kxy.mean())


def _w1_line(a, b) -> float:
    if a.shape[0] == b.shape[0]:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(stats.wasserstein_distance(a, b))


def wasserstein1(  # pylint: disable=too-many-arguments
    x,
    y,
    mode: str = 'auto',
    exact_cutoff: int = EXACT_W1_CUTOFF,
    n_projections: int = SLICED_PROJECTIONS,
    seed: int = 0,
) -> float:
    """Wasserstein-1 between two empirical measures.

    d=1 is solved exactly by sorting. For d>=2 the exact path (mode "exact", or
    "auto" with at most exact_cutoff points) is an optimal assignment over the
    Euclidean cost matrix; otherwise the 1D formula is averaged over seeded
    random unit projections.
    """
    x, y = _pair(x, y)
    if x.shape[1] == 1:
        return _w1_line(x[:, 0], y[:, 0])
    if mode not in ('auto', 'exact', 'sliced'):
        raise ValueError(f'mode must be auto, exact or sliced, got "{mode}"')
    if mode == 'exact' or (mode == 'auto' and max(len(x), len(y)) <= exact_cutoff):
        if len(x) != len(y):
            raise UnequalSampleCounts(len(x), len(y))
        cost = cdist(x, y)
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    directions = generator(seed, 'projections').standard_normal((n_projections, x.shape[1]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    px, py = x @ directions.T, y @ directions.T
    return float(np.mean([_w1_line(px[:, i], py[:, i]) for i in range(n_projections)]))


def _centered(series):
    series = np.asarray(series, dtype=np.float64).ravel()
    if series.size < 2 or np.ptp(series) == 0:
        raise ZeroVariance('Series has zero variance (constant chain)')
    return series - series.mean()


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """rho_0..rho_max_lag with the full-series mean and variance"""
    centered = _centered(series)
    if not 0 <= max_lag < centered.size:
        raise ValueError(f'max_lag must be in [0, {centered.size - 1}], got {max_lag}')
    n = centered.size
    acov = signal.correlate(centered, centered, mode='full', method='fft')[n - 1 : n + max_lag]
    return acov / acov[0]


def ess(series) -> float:
    """n / (1 + 2 sum rho), summing lag pairs while rho_(2t-1) + rho_(2t) > 0, at most n"""
    centered = _centered(series)
    n = centered.size
    rho = autocorrelation(centered, n - 1)
    total = 0.0
    for t in range(1, (n - 1) // 2 + 1):
        pair = rho[2 * t - 1] + rho[2 * t]
        if not pair > 0:
            break
        total += pair
    return float(min(n, n / (1.0 + 2.0 * total)))


def _states(trace_or_states):
    states = getattr(trace_or_states, 'states', trace_or_states)
    return as_points(states, what='states')


def moment_trace(trace, window: int) -> np.ndarray:
    """Sliding mean of |theta|^2 over the last `window` states (fewer at the start)"""
    states = _states(trace)
    if states.shape[0] == 0:
        raise ValueError('moment_trace needs a non-empty trace')
    if window < 1:
        raise ValueError(f'window must be positive, got {window}')
    sq = np.einsum('ij,ij->i', states, states)
    cumulative = np.concatenate([[0.0], np.cumsum(sq)])
    ends = np.arange(1, sq.size + 1)
    starts = np.maximum(ends - window, 0)
    return (cumulative[ends] - cumulative[starts]) / (ends - starts)


def summary_stats(samples):
    samples = as_points(samples, what='samples')
    if samples.shape[0] < 2:
        raise ValueError(f'summary_stats needs at least 2 samples, got {samples.shape[0]}')
    return samples.mean(axis=0), np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))


def first_visit(trace, center, radius: float, start: int = 0) -> Optional[int]:
    """First iteration at or after `start` whose state lies strictly inside the ball.

    None if the chain never enters it. Iterations are counted from the start of
    the trace, so a post-burn-in search returns absolute iteration numbers.
    """
    states = _states(trace)
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (states.shape[1],):
        raise DimensionMismatch(states.shape[1], center.size, 'center')
    if start < 0:
        raise ValueError(f'start must be non-negative, got {start}')
    inside = np.flatnonzero(np.linalg.norm(states[start:] - center, axis=1) < radius)
    return int(inside[0]) + start if inside.size else None


class MomentCheck(NamedTuple):
    peak: float
    bound: Optional[float]
    ok: bool


def check_moment_bound(trace, target, window: int = 10000, factor: float = 10.0) -> MomentCheck:
    """Windowed E|theta|^2 against factor * trace(Cov) of the target"""
    states = _states(trace)
    if not np.all(np.isfinite(states)):
        logger.warning('Trace on %s holds non-finite states', target.name)
        return MomentCheck(float('inf'), None, False)
    peak = float(moment_trace(states, window).max())
    reference = target.trace_cov
    if reference is None:
        return MomentCheck(peak, None, True)
    bound = factor * (reference + float(np.sum(target.analytic_mean**2)))
    ok = peak <= bound
    if not ok:
        logger.warning(
            'Windowed second moment %.4g exceeds %.4g on %s', peak, bound, target.name
        )
    return MomentCheck(peak, bound, ok)


def evenly_spaced(samples, count: int) -> np.ndarray:
    samples = as_points(samples, what='samples')
    if samples.shape[0] <= count:
        return samples
    return samples[np.linspace(0, samples.shape[0] - 1, count).round().astype(int)]


@dataclass
class MetricReport:
    """Metrics of one sample set against a reference set"""

    mmd2: float
    w1: float
    ess_per_dim: List[float]
    autocorr: List[List[float]]
    moment_trace: List[float]
    mean: List[float]
    cov: List[List[float]]
    bandwidth: float
    sample_count: int
    eval_count: int = field(default=0)

    @property
    def ess_mean(self) -> float:
        return float(np.mean(self.ess_per_dim))

    @property
    def autocorr_mean(self) -> List[float]:
        """Autocorrelation curve averaged across dimensions"""
        return np.mean(np.asarray(self.autocorr), axis=0).tolist()

    @property
    def lag1(self) -> float:
        curve = self.autocorr_mean
        return curve[1] if len(curve) > 1 else 1.0

    def to_dict(self) -> dict:
        data = asdict(self)
        data['ess_mean'] = self.ess_mean
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricReport':
        return cls(**{key: value for key, value in data.items() if key != 'ess_mean'})


def evaluate(  # pylint: disable=too-many-arguments
    samples,
    reference,
    max_lag: int = 50,
    eval_points: int = 1000,
    seed: int = 0,
    moment_window: int = 1000,
) -> MetricReport:
    """Metric report of post-burn-in samples against reference draws.

    MMD and W1 compare evenly spaced subsets of a common size (at most eval_points);
    ESS and autocorrelation use every sample.
    """
    samples, reference = _pair(samples, reference)
    count = min(eval_points, samples.shape[0], reference.shape[0])
    left, right = evenly_spaced(samples, count), evenly_spaced(reference, count)
    sigma = pooled_bandwidth(left, right)
    lag = min(max_lag, samples.shape[0] - 1)
    mean, cov = summary_stats(samples)
    moments = evenly_spaced(moment_trace(samples, moment_window)[:, None], MOMENT_TRACE_POINTS)
    return MetricReport(
        mmd2=mmd2(left, right, sigma),
        w1=wasserstein1(left, right, seed=seed),
        ess_per_dim=[ess(column) for column in samples.T],
        autocorr=[autocorrelation(column, lag).tolist() for column in samples.T],
        moment_trace=moments[:, 0].tolist(),
        mean=mean.tolist(),
        cov=cov.tolist(),
        bandwidth=sigma,
        sample_count=int(samples.shape[0]),
        eval_count=int(count),
    )
