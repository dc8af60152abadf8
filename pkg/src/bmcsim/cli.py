"""Command-line interface.

Subcommands: ``simulate`` (write a tree CSV), ``estimate`` (fit the
autoregression on a tree CSV and emit the report JSON), ``experiment``
(dispatch a Monte Carlo or exact-table experiment).  Configs are JSON
files validated against a closed schema (unknown keys are rejected);
flags override config fields one by one and the effective config is
echoed to stdout before any computation.

Exit codes: 0 success, 2 config error, 3 data error, 4 degenerate
computation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import jsonschema

from .harness import ExperimentConfig, run_experiment
from .harness.config import EXPERIMENT_TYPES, build_kernel
from .inference import DegenerateDesignError, ZeroVarianceError, estimate
from .simulate import (
    IncompleteTreeError,
    derive_rng,
    population_from_csv,
    simulate_tree,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4

_INITIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["point", "gaussian"]},
        "x0": {"type": "number"},
        "m": {"type": "number"},
        "v": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "bar"},
                "alpha0": {"type": "number"}, "beta0": {"type": "number"},
                "alpha1": {"type": "number"}, "beta1": {"type": "number"},
                "sigma2": {"type": "number", "minimum": 0},
                "rho": {"type": "number"},
                "noise_family": {
                    "enum": ["gaussian", "truncated-gaussian", "uniform-box"]
                },
                "noise_bound": {"type": "number", "exclusiveMinimum": 0},
                "initial": _INITIAL_SCHEMA,
            },
            "required": ["kind", "alpha0", "beta0", "alpha1", "beta1"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "finite"},
                "p": {"type": "array"},
                "nu": {"type": "array"},
                "path": {"type": "string"},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
    ],
}

FUNCTIONAL_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["single", "triangle"]},
        "name": {"type": "string"},
        "table": {"type": "array"},
        "center": {"type": "boolean"},
    },
    "additionalProperties": False,
}

SIMULATE_SCHEMA = {
    "type": "object",
    "properties": {
        "model": MODEL_SCHEMA,
        "depth": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "filename": {"type": "string"},
    },
    "required": ["model", "depth"],
    "additionalProperties": False,
}

_NUMBER_ARRAY = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_INT_ARRAY = {"type": "array", "items": {"type": "integer"}, "minItems": 1}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENT_TYPES)},
        "model": MODEL_SCHEMA,
        "functional": FUNCTIONAL_SCHEMA,
        "seed": {"type": "integer", "minimum": 0},
        "experiment_id": {"type": "string"},
        "replications": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "depths": _INT_ARRAY,
        "n_grid": _INT_ARRAY,
        "x_grid": _NUMBER_ARRAY,
        "deltas": _NUMBER_ARRAY,
        "delta_mode": {"enum": ["half-sd-at-min-depth"]},
        "pilot_replications": {"type": "integer", "minimum": 2},
        "gamma": {"type": "number"},
        "speed_setting": {"enum": ["hh2", "h1-with-alpha"]},
        "target": {"type": "string"},
        "level": {"type": "number"},
        "epsilon": {"type": "number"},
        "tail_window": {"type": "integer", "minimum": 1},
        "tolerance": {"type": "number"},
        "floor": {"type": "number"},
        "n_trajectories": {"type": "integer", "minimum": 1},
        "r_values": _INT_ARRAY,
        "p_values": _INT_ARRAY,
        "orders": _INT_ARRAY,
        "n_random_kernels": {"type": "integer", "minimum": 1},
        "f_table": _NUMBER_ARRAY,
        "out": {"type": "string"},
    },
    "required": ["experiment"],
    "additionalProperties": False,
}


class ConfigError(Exception):
    pass


def _load_config(path, schema) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config rejected: {exc.message}") from exc
    return raw


def _echo(config: dict) -> None:
    print("effective config: " + json.dumps(config, sort_keys=True))


def cmd_simulate(args) -> int:
    config = _load_config(args.config, SIMULATE_SCHEMA)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out"] = args.out
    config.setdefault("seed", 0)
    config.setdefault("out", ".")
    config.setdefault("filename", "tree.csv")
    _echo(config)
    try:
        kernel = build_kernel(config["model"])
        rng = derive_rng(config["seed"], "simulate")
        pop = simulate_tree(kernel, config["depth"], rng)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(config["out"], exist_ok=True)
    path = os.path.join(config["out"], config["filename"])
    pop.to_csv(path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    from .inference import asymmetry_test, least_squares

    try:
        pop = population_from_csv(args.input)
    except IncompleteTreeError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    r = pop.depth - 1
    try:
        theta_hat, (a_r, b_r) = least_squares(pop, r)
    except DegenerateDesignError as exc:
        print(f"degenerate computation: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = estimate(pop, r)
        decision = asymmetry_test(report.chi1, args.level)
        payload = {"report": report.to_json_dict(),
                   "decision": decision.to_json_dict()}
    except ZeroVarianceError:
        # Noise-free data: the regression is exact but the correlation
        # and the asymmetry test are undefined at zero residual variance.
        from .inference import residuals as _residuals

        e0, e1 = _residuals(pop, theta_hat, r)
        sigma2 = float((e0 @ e0 + e1 @ e1) / (2 * len(e0)))
        payload = {
            "report": {
                "r": r,
                "alpha0_hat": theta_hat[0], "beta0_hat": theta_hat[1],
                "alpha1_hat": theta_hat[2], "beta1_hat": theta_hat[3],
                "sigma2_hat": sigma2, "a_r": a_r, "b_r": b_r,
            },
            "decision": {"verdict": "undefined (zero residual variance)"},
        }
    except DegenerateDesignError as exc:
        print(f"degenerate computation: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, args.output_name)
    from .harness.report import write_json

    write_json(path, payload)
    print(json.dumps(payload["decision"], sort_keys=True))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _load_config(args.config, EXPERIMENT_SCHEMA)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out"] = args.out
    if args.workers is not None:
        config["workers"] = args.workers
    out_dir = config.pop("out", ".")
    _echo({**config, "out": out_dir})
    valid_fields = {f.name for f in fields(ExperimentConfig)}
    try:
        cfg = ExperimentConfig(**{k: v for k, v in config.items()
                                  if k in valid_fields})
        result = run_experiment(cfg, out_dir=out_dir)
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {result['csv_path']} and {result['json_path']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmcsim",
        description="bifurcating Markov chain simulation, estimation and "
                    "Monte Carlo verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a tree and write its CSV")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="fit the autoregression on a tree CSV")
    p_est.add_argument("input")
    p_est.add_argument("--level", type=float, default=0.05)
    p_est.add_argument("--out", default=None)
    p_est.add_argument("--output-name", default="estimate.json")
    p_est.set_defaults(func=cmd_estimate)

    p_exp = sub.add_parser("experiment", help="run a configured experiment")
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--out", default=None)
    p_exp.add_argument("--workers", type=int, default=None)
    p_exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
