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

"""Report files: metrics.json, per-seed trace CSVs and SVG charts"""

import csv
import json
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2.environment import Environment
from jinja2.loaders import FileSystemLoader
from jinja2.runtime import StrictUndefined

from srld.dynamics import Phase, Trace

# Init logger
logger = logging.getLogger(__name__)

TEMPLATES = os.path.join(os.path.dirname(__file__), 'templates')
WIDTH, HEIGHT, MARGIN = 480, 320, 48
COLORS = ('#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b')
STRIP_METRICS = {
    'mmd': ('mmd2', 'MMD^2'),
    'w1': ('w1', 'Wasserstein-1'),
    'ess': ('ess_mean', 'ESS'),
}


class ReportError(Exception):
    def __init__(self, path, error):
        self.path = path
        super().__init__(f'Cannot write {path}: {error}')


def _env() -> Environment:
    return Environment(
        loader=FileSystemLoader(TEMPLATES), undefined=StrictUndefined, autoescape=True
    )


def _jsonable(value):
    """Plain JSON types, non-finite floats become null"""
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def _write_text(path, text):
    try:
        with open(path, 'w', encoding='utf-8') as stream:
            stream.write(text)
    except OSError as error:
        raise ReportError(path, error.strerror or error) from error
    logger.info('Wrote %s', path)


def write_metrics(result, path) -> str:
    text = json.dumps(_jsonable(result.to_dict()), indent=2, sort_keys=True, allow_nan=False)
    _write_text(path, text + '\n')
    return path


def write_trace_csv(trace: Trace, path, keep_every: Optional[int] = None) -> str:
    """Header iter,x0..x{d-1},phase then one row per kept state, burn-in included"""
    iterations, states = trace.kept(keep_every)
    phases = trace.phase_codes[iterations]
    names = [phase.value for phase in Phase]
    try:
        with open(path, 'w', encoding='utf-8', newline='') as stream:
            writer = csv.writer(stream, lineterminator='\n')
            writer.writerow(['iter'] + [f'x{i}' for i in range(trace.dim)] + ['phase'])
            for iteration, state, phase in zip(iterations, states, phases):
                writer.writerow([int(iteration)] + [repr(float(v)) for v in state] + [names[phase]])
    except OSError as error:
        raise ReportError(path, error.strerror or error) from error
    logger.info('Wrote %s', path)
    return path


def read_trace_csv(path) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Iterations, states and phase tags of a trace CSV.

    A file without iter/phase columns is read as bare coordinates, one row per sample.
    """
    try:
        with open(path, 'r', encoding='utf-8', newline='') as stream:
            rows = list(csv.reader(stream))
    except OSError as error:
        raise ReportError(path, error.strerror or error) from error
    if not rows:
        raise ValueError(f'{path}: empty trace file')
    header, body = rows[0], [row for row in rows[1:] if row]
    if not body:
        raise ValueError(f'{path}: trace file has no samples')
    columns = [i for i, name in enumerate(header) if name.startswith('x')]
    if not columns:
        raise ValueError(f'{path}: no x0..x(d-1) columns in header {header}')
    try:
        states = np.array([[float(row[i]) for i in columns] for row in body])
    except (ValueError, IndexError) as error:
        raise ValueError(f'{path}: malformed row ({error})') from None
    if 'iter' in header:
        iterations = np.array([int(row[header.index('iter')]) for row in body])
    else:
        iterations = np.arange(len(body))
    phases = [row[header.index('phase')] for row in body] if 'phase' in header else []
    return iterations, states, phases


def _scale(values: Sequence[float], low: float, high: float, start: float, end: float):
    span = (high - low) or 1.0
    return [start + (value - low) / span * (end - start) for value in values]


def _ticks(low: float, high: float, count: int = 5):
    return [low + (high - low) * i / (count - 1) for i in range(count)]


def strip_chart(title: str, groups: Dict[str, List[Optional[float]]]) -> str:
    """One column of per-seed dots per method with its median as a bar"""
    values = [v for points in groups.values() for v in points if v is not None]
    low, high = (min(values), max(values)) if values else (0.0, 1.0)
    pad = (high - low) * 0.05 or 0.5
    low, high = low - pad, high + pad
    top, bottom = MARGIN, HEIGHT - MARGIN
    column = (WIDTH - 2 * MARGIN) / max(1, len(groups))
    columns = []
    for index, (label, points) in enumerate(groups.items()):
        kept = [v for v in points if v is not None]
        x = MARGIN + column * (index + 0.5)
        median = float(np.median(kept)) if kept else None
        columns.append(
            {
                'label': label,
                'x': x,
                'color': COLORS[index % len(COLORS)],
                'ys': _scale(kept, low, high, bottom, top),
                'median': _scale([median], low, high, bottom, top)[0] if kept else None,
            }
        )
    ticks = _ticks(low, high)
    return (
        _env()
        .get_template('strip.svg.j2')
        .render(
            title=title,
            width=WIDTH,
            height=HEIGHT,
            margin=MARGIN,
            half=column * 0.3,
            columns=columns,
            ticks=list(zip(_scale(ticks, low, high, bottom, top), ticks)),
        )
    )


def line_chart(title: str, curves: Dict[str, Sequence[float]], x_label: str = 'lag') -> str:
    values = [v for curve in curves.values() for v in curve]
    low, high = (min(values + [0.0]), max(values + [1.0])) if values else (0.0, 1.0)
    length = max((len(curve) for curve in curves.values()), default=1)
    left, right, top, bottom = MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN
    series = []
    for index, (label, curve) in enumerate(curves.items()):
        xs = _scale(range(len(curve)), 0, max(1, length - 1), left, right)
        ys = _scale(curve, low, high, bottom, top)
        series.append(
            {
                'label': label,
                'color': COLORS[index % len(COLORS)],
                'points': ' '.join(f'{x:.2f},{y:.2f}' for x, y in zip(xs, ys)),
            }
        )
    ticks = _ticks(low, high)
    return (
        _env()
        .get_template('lines.svg.j2')
        .render(
            title=title,
            x_label=x_label,
            width=WIDTH,
            height=HEIGHT,
            margin=MARGIN,
            series=series,
            zero=_scale([0.0], low, high, bottom, top)[0],
            ticks=list(zip(_scale(ticks, low, high, bottom, top), ticks)),
            last_lag=length - 1,
        )
    )


def _mean_curves(result) -> Dict[str, List[float]]:
    curves = {}
    for method in result.methods:
        rows = [
            outcome.methods[method].report.autocorr_mean
            for outcome in result.per_seed
            if not outcome.methods[method].failed
        ]
        if rows:
            length = min(len(row) for row in rows)
            curves[method] = np.mean([row[:length] for row in rows], axis=0).tolist()
    return curves


def emit_reports(result, out_dir) -> List[str]:
    """metrics.json, traces/<method>_<seed>.csv and plots/<metric>.svg under out_dir"""
    plots, traces = os.path.join(out_dir, 'plots'), os.path.join(out_dir, 'traces')
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as error:
        raise ReportError(out_dir, error.strerror or error) from error
    written = [write_metrics(result, os.path.join(out_dir, 'metrics.json'))]
    if not result.methods:
        return written
    for directory in (plots, traces):
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as error:
            raise ReportError(directory, error.strerror or error) from error
    for outcome in result.per_seed:
        for method, method_outcome in outcome.methods.items():
            if method_outcome.trace is None:
                continue
            path = os.path.join(traces, f'{method}_{outcome.seed}.csv')
            written.append(write_trace_csv(method_outcome.trace, path, result.keep_every))
    for name, (metric, title) in STRIP_METRICS.items():
        groups = {method: result.values(method, metric) for method in result.methods}
        path = os.path.join(plots, f'{name}.svg')
        _write_text(path, strip_chart(f'{title} per seed', groups))
        written.append(path)
    path = os.path.join(plots, 'autocorr.svg')
    _write_text(path, line_chart('Autocorrelation averaged over dimensions', _mean_curves(result)))
    written.append(path)
    return written
