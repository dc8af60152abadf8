"""Trend experiments: moderate-deviation curves, superexponential decay,
and strong-law trajectory diagnostics.

Quantities whose limits are superexponentially small cannot be estimated
by Monte Carlo, so these runners report normalized log-probability
curves with explicit censoring and verdicts phrased as monotone-trend
properties, never as quantitative limit checks.
"""

from __future__ import annotations

import math

import numpy as np

from ..exact import speed_sequence
from ..inference import estimate_batch
from ..simulate import derive_rng, simulate_trees
from ..tree import subtree_size
from .config import ExperimentConfig, build_functional, build_kernel, mixing_rate
from .experiments import _batch_sizes, _triangle_values_matrix
from .report import binomial_se, parallel_map

SUPEREXP_TARGETS = ("mean-functional", "bracket-over-n", "theta-hat", "sigma2-rho")


def permuted_prefix_sums(values_f: np.ndarray, ns, rng) -> np.ndarray:
    """Prefix sums of per-node values along independent permuted orders.

    ``values_f`` has one row per replication covering a complete tree;
    each generation block is permuted independently per row, then the
    running sums are read off at the requested prefix lengths.
    """
    n_rows, n_nodes = values_f.shape
    depth = n_nodes.bit_length() - 1
    if n_nodes != subtree_size(depth):
        raise ValueError("rows must cover a complete tree")
    permuted = np.empty_like(values_f)
    for q in range(depth + 1):
        block = values_f[:, 2**q - 1 : 2 ** (q + 1) - 1]
        permuted[:, 2**q - 1 : 2 ** (q + 1) - 1] = rng.permuted(block, axis=1)
    csum = np.cumsum(permuted, axis=1)
    ns = np.asarray(ns, dtype=np.int64)
    return csum[:, ns - 1]


def _speed_report(config: ExperimentConfig, alpha: float) -> dict:
    setting = config.speed_setting
    seq = speed_sequence(config.gamma, setting,
                         alpha=alpha if setting == "h1-with-alpha" else None,
                         horizon=max(config.n_grid) if config.n_grid else 2**20)
    return seq.report()


def _normalized_log(n: float, b_n: float, p_hat: float) -> float:
    return (n / b_n**2) * math.log(p_hat)


def _trend_verdict(stats_vals, censored, floor) -> str:
    """Classify a normalized log-probability curve.

    ``consistent-with-minus-infinity`` means the uncensored prefix is
    strictly decreasing and the curve ends censored or below the floor.
    """
    unc = [s for s, c in zip(stats_vals, censored) if not c]
    if not unc:
        return "fully-censored"
    decreasing = all(b < a for a, b in zip(unc, unc[1:]))
    ends_low = censored[-1] or (floor is not None and unc[-1] <= floor)
    if decreasing and ends_low:
        return "consistent-with-minus-infinity"
    if decreasing:
        return "decreasing"
    return "no-trend"


# -- moderate-deviation curves ------------------------------------------------


def _mdp_batch(task):
    (model, functional, seed, exp_id, batch_idx, batch_n,
     n_grid, x_grid, gamma) = task
    kernel = build_kernel(model)
    info = build_functional(kernel, functional)
    rng = derive_rng(seed, exp_id, 0, batch_idx)
    depth = int(max(n_grid)).bit_length()  # r_n + 1 for the largest prefix
    vals = simulate_trees(kernel, depth, batch_n, rng)
    tri = _triangle_values_matrix(vals, info.functional)
    sums = permuted_prefix_sums(tri, n_grid, rng)
    b = np.asarray(n_grid, dtype=np.float64) ** gamma
    scaled = sums / b[None, :]
    xs = np.asarray(x_grid)
    return (scaled[:, :, None] >= xs[None, None, :]).sum(axis=0)


def mdp_experiment(config: ExperimentConfig) -> dict:
    """Normalized log-probability curves of the permuted martingale.

    For each prefix length ``n`` and each level ``x`` the runner reports
    ``(n / b_n^2) log P(M_n / b_n >= x)`` with censoring, next to the
    quadratic reference ``-x^2 / (2 v)`` built from the exact conditional
    variance ``v``.  Boundedness of the increments against the scaling
    is recorded as a configuration-time check, not estimated.
    """
    for name in ("n_grid", "x_grid", "gamma", "functional"):
        if getattr(config, name) is None:
            raise ValueError(f"mdp experiment needs {name}")
    kernel = build_kernel(config.model)
    info = build_functional(kernel, config.functional)
    if info.variance is None or info.variance <= 0:
        raise ValueError("mdp experiment needs a centered triangle functional")
    alpha = mixing_rate(kernel)
    speed = _speed_report(config, alpha)
    n = config.replications
    tasks = [
        (config.model, config.functional, config.seed, config.experiment_id,
         bi, bn, config.n_grid, config.x_grid, config.gamma)
        for bi, bn in _batch_sizes(n, config.batch_size)
    ]
    counts = sum(parallel_map(_mdp_batch, tasks, config.workers))

    ns = np.asarray(config.n_grid, dtype=np.float64)
    b = ns**config.gamma
    rows = []
    curves = {}
    for j, x in enumerate(config.x_grid):
        stats_vals, cens = [], []
        for i, n_pref in enumerate(config.n_grid):
            count = int(counts[i, j])
            p_hat = count / n
            censored = count == 0
            stat = (_normalized_log(ns[i], b[i], max(p_hat, 1.0 / n))
                    if not censored else _normalized_log(ns[i], b[i], 1.0 / n))
            reference = -(x**2) / (2.0 * info.variance)
            rows.append((n_pref, x, count, n, p_hat,
                         binomial_se(count, n), censored, stat, reference))
            stats_vals.append(stat)
            cens.append(censored)
        curves[repr(float(x))] = {
            "statistic": stats_vals,
            "censored": cens,
            "reference": -(x**2) / (2.0 * info.variance),
        }
    # Configuration-time boundedness check of the increments vs the scaling.
    cond = {"bounded_increments": info.sup is not None}
    if info.sup is not None:
        crossing = [int(nn) for nn in config.n_grid if nn**config.gamma > info.sup]
        cond["b_n_exceeds_sup_from"] = crossing[0] if crossing else None
        cond["holds_identically_beyond"] = bool(crossing)
    x0_curve = curves.get(repr(0.0))
    verdicts = {}
    if x0_curve is not None:
        vals = x0_curve["statistic"]
        verdicts["x0_tends_to_zero"] = bool(
            all(b2 > a2 for a2, b2 in zip(vals, vals[1:])) and abs(vals[-1]) < abs(vals[0])
        )
    summary = {
        "config": config.to_json_dict(),
        "alpha": alpha,
        "variance": info.variance,
        "speed_check": speed,
        "increment_condition": cond,
        "curves": curves,
        "verdicts": verdicts,
        "censored_bound": 1.0 / n,
    }
    header = ["n", "x", "count", "replications", "p_hat", "stderr",
              "censored", "statistic", "reference"]
    return {"summary": summary, "csv_header": header, "csv_rows": rows}


# -- superexponential convergence ---------------------------------------------


def _superexp_mean_batch(task):
    (model, functional, seed, exp_id, batch_idx, batch_n, n_grid, delta,
     target) = task
    kernel = build_kernel(model)
    info = build_functional(kernel, functional)
    rng = derive_rng(seed, exp_id, 0, batch_idx)
    depth = int(max(n_grid)).bit_length() - 1
    if target == "bracket-over-n":
        depth += 1  # bracket integrand sits at the permuted mothers
        vals = simulate_trees(kernel, depth, batch_n, rng)
        node_vals = info.pf2(vals[:, : subtree_size(depth - 1)])
        center = info.variance
    else:
        vals = simulate_trees(kernel, depth, batch_n, rng)
        node_vals = info.functional(vals)
        center = 0.0
    sums = permuted_prefix_sums(node_vals, n_grid, rng)
    means = sums / np.asarray(n_grid, dtype=np.float64)[None, :]
    return (np.abs(means - center) > delta).sum(axis=0)


def _superexp_estimator_batch(task):
    (model, seed, exp_id, depth_idx, depth, batch_idx, batch_n, delta,
     target, reference) = task
    kernel = build_kernel(model)
    rng = derive_rng(seed, exp_id, depth_idx, batch_idx)
    vals = simulate_trees(kernel, depth + 1, batch_n, rng)
    est = estimate_batch(vals)
    if target == "theta-hat":
        dev = np.max(np.abs(np.column_stack(
            [est["alpha0"], est["beta0"], est["alpha1"], est["beta1"]]
        ) - np.asarray(reference)), axis=1)
    else:
        dev = np.maximum(np.abs(est["sigma2"] - reference[0]),
                         np.abs(est["rho"] - reference[1]))
    dev = np.where(est["degenerate"], np.inf, dev)
    return int((dev > delta).sum())


def superexp_diagnostic(config: ExperimentConfig) -> dict:
    """Normalized log-probability trend of a deviation event.

    Targets: the permuted mean of a centered functional, the martingale
    bracket over n, or the parameter / variance-correlation estimators
    (grid indexed by tree depth).  Verdict per grid:
    ``consistent-with-minus-infinity`` when the uncensored statistic is
    strictly decreasing and the curve ends censored or below the floor.
    """
    if config.target not in SUPEREXP_TARGETS:
        raise ValueError(f"target must be one of {SUPEREXP_TARGETS}")
    if config.gamma is None:
        raise ValueError("superexp diagnostic needs gamma")
    delta = config.tolerance
    if delta is None or delta <= 0:
        raise ValueError("superexp diagnostic needs a positive tolerance (delta)")
    kernel = build_kernel(config.model)
    alpha = mixing_rate(kernel)
    n = config.replications

    if config.target in ("mean-functional", "bracket-over-n"):
        if config.n_grid is None or config.functional is None:
            raise ValueError("this target needs n_grid and a functional")
        info = build_functional(kernel, config.functional)
        if config.target == "bracket-over-n" and info.pf2 is None:
            raise ValueError("bracket target needs a triangle functional")
        if config.target == "mean-functional" and not info.centered:
            raise ValueError("mean-functional target needs a centered functional")
        tasks = [
            (config.model, config.functional, config.seed, config.experiment_id,
             bi, bn, config.n_grid, delta, config.target)
            for bi, bn in _batch_sizes(n, config.batch_size)
        ]
        counts = sum(parallel_map(_superexp_mean_batch, tasks, config.workers))
        grid_ns = np.asarray(config.n_grid, dtype=np.float64)
        grid_label = "n"
        grid_values = list(config.n_grid)
    else:
        if config.depths is None:
            raise ValueError("estimator targets need depths")
        from ..kernels import noise_moments

        eff = noise_moments(kernel)
        reference = (kernel.theta if config.target == "theta-hat"
                     else (eff["sigma2"], eff["rho"]))
        counts = np.zeros(len(config.depths), dtype=np.int64)
        for di, depth in enumerate(config.depths):
            tasks = [
                (config.model, config.seed, config.experiment_id, di, depth,
                 bi, bn, delta, config.target, reference)
                for bi, bn in _batch_sizes(n, config.batch_size)
            ]
            counts[di] = sum(parallel_map(_superexp_estimator_batch, tasks,
                                          config.workers))
        grid_ns = np.array([subtree_size(r) for r in config.depths],
                           dtype=np.float64)
        grid_label = "depth"
        grid_values = list(config.depths)

    b = grid_ns**config.gamma
    rows, stats_vals, cens = [], [], []
    for i, gval in enumerate(grid_values):
        count = int(counts[i])
        p_hat = count / n
        censored = count == 0
        stat = _normalized_log(grid_ns[i], b[i], max(p_hat, 1.0 / n))
        rows.append((gval, int(grid_ns[i]), delta, count, n, p_hat,
                     binomial_se(count, n), censored, stat))
        stats_vals.append(stat)
        cens.append(censored)
    verdict = _trend_verdict(stats_vals, cens, config.floor)
    summary = {
        "config": config.to_json_dict(),
        "alpha": alpha,
        "target": config.target,
        "delta": delta,
        "speed_check": _speed_report(config, alpha),
        "statistic": stats_vals,
        "censored": cens,
        "verdict": verdict,
        "censored_bound": 1.0 / n,
    }
    header = [grid_label, "n_effective", "delta", "count", "replications",
              "p_hat", "stderr", "censored", "statistic"]
    return {"summary": summary, "csv_header": header, "csv_rows": rows}


# -- strong-law trajectories --------------------------------------------------


def slln_diagnostic(config: ExperimentConfig) -> dict:
    """Permuted-mean trajectories along a dyadic grid.

    Verdict: every trajectory's final absolute mean is below the
    configured tolerance.  Uncentered functionals are the negative
    control; their trajectories settle near the stationary mean instead.
    """
    if config.n_grid is None or config.functional is None:
        raise ValueError("slln diagnostic needs n_grid and a functional")
    if config.tolerance is None:
        raise ValueError("slln diagnostic needs a tolerance")
    kernel = build_kernel(config.model)
    info = build_functional(kernel, config.functional)
    depth = int(max(config.n_grid)).bit_length() - 1
    rows = []
    finals = []
    for t in range(config.n_trajectories):
        rng = derive_rng(config.seed, config.experiment_id, t)
        vals = simulate_trees(kernel, depth, 1, rng)
        node_vals = info.functional(vals)
        sums = permuted_prefix_sums(node_vals, config.n_grid, rng)[0]
        means = np.abs(sums / np.asarray(config.n_grid, dtype=np.float64))
        for n_pref, m in zip(config.n_grid, means):
            rows.append((t, n_pref, m, None, False))
        finals.append(float(means[-1]))
    summary = {
        "config": config.to_json_dict(),
        "final_abs_means": finals,
        "tolerance": config.tolerance,
        "verdicts": {
            "all_below_tolerance": bool(max(finals) <= config.tolerance),
        },
    }
    header = ["trajectory", "n", "abs_mean", "stderr", "censored"]
    return {"summary": summary, "csv_header": header, "csv_rows": rows}
