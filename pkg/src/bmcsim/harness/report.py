"""Report plumbing: deterministic CSV/JSON writers and small statistics.

Output files are pure functions of their inputs: floats are written with
``repr`` (shortest round-trip form), JSON keys are sorted, and nothing
time- or host-dependent is ever emitted, so identical configs and seeds
reproduce byte-identical files.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy import stats


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def binomial_se(count: int, n: int) -> float:
    p = count / n
    return math.sqrt(p * (1.0 - p) / n)


def ols_slope_ci(xs, ys, conf: float = 0.95):
    """Least-squares slope with a t-based confidence interval.

    Returns ``(slope, lo, hi, intercept)``; needs at least 3 points.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = len(xs)
    if n < 3:
        raise ValueError("slope confidence interval needs at least 3 points")
    xbar, ybar = xs.mean(), ys.mean()
    sxx = float(np.sum((xs - xbar) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate abscissa grid")
    slope = float(np.sum((xs - xbar) * (ys - ybar)) / sxx)
    intercept = ybar - slope * xbar
    resid = ys - (intercept + slope * xs)
    se = math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx)
    t = float(stats.t.ppf(0.5 + conf / 2.0, df=n - 2))
    return slope, slope - t * se, slope + t * se, float(intercept)


def parallel_map(fn, tasks, workers: int):
    """Run picklable tasks, preserving order; workers > 1 uses processes.

    Results are merged in task order, so the output is identical for any
    worker count.
    """
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def experiment_paths(out_dir, experiment_id: str):
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, experiment_id)
    return base + ".csv", base + ".json"
