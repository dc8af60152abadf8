"""Monte Carlo verification harness.

Each experiment is a pure function of its configuration and seed; the
runner writes one long-format CSV of grid estimates and one JSON summary
with the config echo, fitted constants and verdicts.
"""

from __future__ import annotations

from .config import ExperimentConfig, build_functional, build_kernel, mixing_rate
from .experiments import clt_experiment, deviation_experiment, estimator_clt_experiment
from .paths import asclt_diagnostic, lil_diagnostic
from .report import experiment_paths, write_csv, write_json
from .tables import events_exact_experiment, moments_exact_experiment
from .trends import mdp_experiment, slln_diagnostic, superexp_diagnostic

RUNNERS = {
    "deviation": deviation_experiment,
    "clt": clt_experiment,
    "estimator-clt": estimator_clt_experiment,
    "mdp": mdp_experiment,
    "superexp": superexp_diagnostic,
    "lil": lil_diagnostic,
    "asclt": asclt_diagnostic,
    "slln": slln_diagnostic,
    "moments-exact": moments_exact_experiment,
    "events-exact": events_exact_experiment,
}


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Run one experiment; optionally write its CSV and JSON reports."""
    runner = RUNNERS.get(config.experiment)
    if runner is None:
        raise ValueError(f"unknown experiment type {config.experiment!r}")
    result = runner(config)
    if out_dir is not None:
        csv_path, json_path = experiment_paths(out_dir, config.experiment_id)
        write_csv(csv_path, result["csv_header"], result["csv_rows"])
        write_json(json_path, result["summary"])
        result["csv_path"], result["json_path"] = csv_path, json_path
    return result


__all__ = [
    "ExperimentConfig",
    "RUNNERS",
    "run_experiment",
    "build_functional",
    "build_kernel",
    "mixing_rate",
    "deviation_experiment",
    "clt_experiment",
    "estimator_clt_experiment",
    "mdp_experiment",
    "superexp_diagnostic",
    "slln_diagnostic",
    "lil_diagnostic",
    "asclt_diagnostic",
    "moments_exact_experiment",
    "events_exact_experiment",
    "write_csv",
    "write_json",
]
