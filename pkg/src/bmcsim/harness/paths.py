"""Path diagnostics: iterated-logarithm envelope and almost-sure CLT.

Almost-sure statements are not verifiable at finite horizon; these
runners report finite-horizon envelope statistics whose typical behavior
tracks the limits, with tolerances frozen in the configuration.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from ..simulate import derive_rng, simulate_trees
from ..tree import subtree_size
from .config import ExperimentConfig, build_functional, build_kernel
from .experiments import _batch_sizes, _triangle_values_matrix
from .report import binomial_se
from .trends import permuted_prefix_sums


def _tree_sums_by_generation(tri: np.ndarray) -> np.ndarray:
    """Cumulative sums over whole subtrees: column r is the sum over T_r."""
    n_rows, n_nodes = tri.shape
    depth = n_nodes.bit_length() - 1
    csum = np.cumsum(tri, axis=1)
    ends = np.array([subtree_size(r) - 1 for r in range(depth + 1)])
    return csum[:, ends]


def lil_diagnostic(config: ExperimentConfig) -> dict:
    """Iterated-logarithm envelope of normalized tree sums.

    Tracks ``S_r = sum over T_r of f / sqrt(2 |T_r| loglog |T_r| v)``
    with ``v`` the exact conditional variance, reports each
    replication's maximum over the last ``tail_window + 1`` depths and
    the fraction of replications below ``1 + epsilon``.  The window
    starts at depth 2, where loglog is defined.
    """
    if config.depths is None or config.functional is None:
        raise ValueError("lil diagnostic needs depths (max depth) and a functional")
    depth = config.depths[-1]
    if depth < 5:
        raise ValueError("lil diagnostic needs depth >= 5")
    kernel = build_kernel(config.model)
    info = build_functional(kernel, config.functional)
    if info.variance is None or info.variance <= 0:
        raise ValueError("lil diagnostic needs a centered triangle functional")
    n = config.replications
    window_lo = max(2, depth - config.tail_window)
    sizes = np.array([subtree_size(r) for r in range(depth + 1)], dtype=np.float64)
    denom = np.full(depth + 1, np.inf)  # loglog undefined below depth 2
    denom[2:] = np.sqrt(2.0 * sizes[2:] * np.log(np.log(sizes[2:])) * info.variance)
    rows = []
    tail_maxima = []
    for bi, bn in _batch_sizes(n, config.batch_size):
        rng = derive_rng(config.seed, config.experiment_id, 0, bi)
        vals = simulate_trees(kernel, depth + 1, bn, rng)
        tri = _triangle_values_matrix(vals, info.functional)
        sums = _tree_sums_by_generation(tri)
        s = sums / denom[None, :]
        tail_max = s[:, window_lo:].max(axis=1)
        tail_maxima.append(tail_max)
        base = bi * config.batch_size
        for k in range(bn):
            for r in range(2, depth + 1):
                rows.append((base + k, r, s[k, r], None, False))
    tail_max = np.concatenate(tail_maxima)
    frac = float((tail_max <= 1.0 + config.epsilon).mean())
    summary = {
        "config": config.to_json_dict(),
        "variance": info.variance,
        "tail_window": [int(window_lo), int(depth)],
        "fraction_within_envelope": frac,
        "envelope": 1.0 + config.epsilon,
        "fraction_stderr": binomial_se(int(round(frac * n)), n),
        "verdicts": {"envelope_fraction_ok": frac >= 0.9},
    }
    header = ["replication", "depth", "statistic", "stderr", "censored"]
    return {"summary": summary, "csv_header": header, "csv_rows": rows}


def weighted_occupation_cdf(sums: np.ndarray, variance: float,
                            grid: np.ndarray) -> tuple[np.ndarray, float]:
    """Log-weighted occupation CDF of a martingale path.

    ``sums[n-1]`` is the running sum after ``n`` increments; the path is
    rescaled by ``V_n = sqrt(variance * n)``, each epoch weighted by
    ``1 - V_n^2 / V_{n+1}^2`` and the total normalized by ``log V_N^2``.
    Returns the CDF on the grid and the total-weight normalization
    (in (0, 1] for horizons past 16).  A path that never leaves 0 yields
    a step function at 0.
    """
    n = len(sums)
    ns = np.arange(1, n + 1, dtype=np.float64)
    v2 = variance * ns
    weights = 1.0 - ns / (ns + 1.0)
    rescaled = sums / np.sqrt(v2)
    log_vn2 = math.log(v2[-1])
    cdf = np.array([float(weights[rescaled <= x].sum()) / log_vn2 for x in grid])
    return cdf, float(weights.sum()) / log_vn2


def asclt_diagnostic(config: ExperimentConfig) -> dict:
    """Log-weighted occupation measure of the rescaled martingale.

    Along one permuted trajectory of length ``N`` the runner forms the
    weighted empirical CDF with weights ``1 - V_n^2 / V_{n+1}^2`` and
    normalizer ``log V_N^2``, where ``V_n`` is the exact standard
    deviation scale ``sqrt(v n)``, and reports its sup-distance to the
    standard normal CDF on a grid.
    """
    if config.n_grid is None or config.functional is None:
        raise ValueError("asclt diagnostic needs n_grid (horizon) and a functional")
    horizon = int(config.n_grid[-1])
    if horizon < 16:
        raise ValueError("asclt diagnostic needs a horizon of at least 16")
    kernel = build_kernel(config.model)
    info = build_functional(kernel, config.functional)
    if info.variance is None or info.variance <= 0:
        raise ValueError("asclt diagnostic needs a centered triangle functional")
    rng = derive_rng(config.seed, config.experiment_id)
    depth = horizon.bit_length()
    vals = simulate_trees(kernel, depth, 1, rng)
    tri = _triangle_values_matrix(vals, info.functional)
    ns = np.arange(1, horizon + 1)
    sums = permuted_prefix_sums(tri, ns, rng)[0]
    grid = (np.asarray(config.x_grid) if config.x_grid is not None
            else np.linspace(-3.0, 3.0, 61))
    f_hat, normalization = weighted_occupation_cdf(sums, info.variance, grid)
    phi = stats.norm.cdf(grid)
    sup_dist = float(np.max(np.abs(f_hat - phi)))
    tolerance = config.tolerance if config.tolerance is not None else 0.1
    rows = [(x, fh, ph, abs(fh - ph), False)
            for x, fh, ph in zip(grid, f_hat, phi)]
    summary = {
        "config": config.to_json_dict(),
        "variance": info.variance,
        "horizon": horizon,
        "sup_distance": sup_dist,
        "normalization": normalization,
        "tolerance": tolerance,
        "verdicts": {
            "sup_distance_ok": sup_dist <= tolerance,
            "normalization_in_unit_interval": 0.0 < normalization <= 1.0,
        },
    }
    header = ["x", "weighted_cdf", "normal_cdf", "abs_diff", "censored"]
    return {"summary": summary, "csv_header": header, "csv_rows": rows}
