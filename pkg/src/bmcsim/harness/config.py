"""Experiment configuration and model/functional resolution.

One flat record configures every experiment type; each runner checks the
fields it needs.  Models and functionals are described by plain dicts so
configurations round-trip through JSON unchanged, which is what makes
reports pure functions of (config, seed).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..exact import centered_functional, stationary_distribution
from ..kernels import (
    BarParams,
    FiniteKernel,
    Functional,
    GaussianLaw,
    PointMass,
    apply_P,
    bar_residual_functional,
    load_finite_kernel,
    mean_kernel,
    noise_moments,
    single_functional,
    triangle_functional,
)
from ..inference import stationary_moments

EXPERIMENT_TYPES = (
    "deviation",
    "clt",
    "estimator-clt",
    "mdp",
    "superexp",
    "lil",
    "asclt",
    "slln",
    "moments-exact",
    "events-exact",
)


@dataclass
class ExperimentConfig:
    """Configuration record shared by all experiment runners.

    Tolerances, grids and replication counts are deliberate calibration
    choices and live here, never hard-coded in the runners.
    """

    experiment: str
    model: dict | None = None
    functional: dict | None = None
    seed: int = 0
    experiment_id: str = ""
    replications: int = 1000
    batch_size: int = 8192
    workers: int = 1
    # grids
    depths: tuple[int, ...] | None = None
    n_grid: tuple[int, ...] | None = None
    x_grid: tuple[float, ...] | None = None
    deltas: tuple[float, ...] | None = None
    delta_mode: str | None = None  # "half-sd-at-min-depth"
    pilot_replications: int = 2000
    # moderate-deviation scaling
    gamma: float | None = None
    speed_setting: str = "hh2"
    # per-experiment knobs
    target: str | None = None
    level: float = 0.05
    epsilon: float = 0.5
    tail_window: int = 3
    tolerance: float | None = None
    floor: float | None = None
    n_trajectories: int = 5
    # exact-table experiments
    r_values: tuple[int, ...] | None = None
    p_values: tuple[int, ...] | None = None
    orders: tuple[int, ...] = (2,)
    n_random_kernels: int = 5
    f_table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_TYPES:
            raise ValueError(f"unknown experiment type {self.experiment!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for name in ("depths", "n_grid", "x_grid", "deltas",
                     "r_values", "p_values", "orders"):
            grid = getattr(self, name)
            if grid is not None:
                grid = tuple(grid)
                setattr(self, name, grid)
                if len(grid) == 0:
                    raise ValueError(f"{name} must be nonempty when given")
                if list(grid) != sorted(grid):
                    raise ValueError(f"{name} must be increasing")
                if name in ("depths", "n_grid") and len(set(grid)) != len(grid):
                    raise ValueError(f"{name} must be strictly increasing")
        if self.experiment in ("mdp", "superexp") and self.gamma is not None:
            if not 0.5 < self.gamma < 1.0:
                raise ValueError("gamma must lie in (1/2, 1)")
        if not self.experiment_id:
            self.experiment_id = self.experiment

    def to_json_dict(self) -> dict:
        out = asdict(self)
        return {k: v for k, v in out.items() if v is not None}


def build_initial_law(spec: dict):
    kind = spec.get("kind", "point")
    if kind == "point":
        return PointMass(float(spec.get("x0", 0.0)))
    if kind == "gaussian":
        return GaussianLaw(float(spec.get("m", 0.0)), float(spec.get("v", 1.0)))
    raise ValueError(f"unknown initial law {kind!r}")


def build_kernel(model: dict):
    """Instantiate the kernel described by a model dict."""
    kind = model.get("kind")
    if kind == "bar":
        initial = build_initial_law(model.get("initial", {"kind": "point", "x0": 0.0}))
        return BarParams(
            alpha0=float(model["alpha0"]), beta0=float(model["beta0"]),
            alpha1=float(model["alpha1"]), beta1=float(model["beta1"]),
            sigma2=float(model.get("sigma2", 1.0)),
            rho=float(model.get("rho", 0.0)),
            noise_family=model.get("noise_family", "gaussian"),
            noise_bound=float(model.get("noise_bound", 1.0)),
            initial_law=initial,
        )
    if kind == "finite":
        if "path" in model:
            return load_finite_kernel(model["path"])
        return FiniteKernel(p=np.asarray(model["p"], dtype=np.float64),
                            nu=np.asarray(model["nu"], dtype=np.float64))
    raise ValueError(f"unknown model kind {kind!r}")


def mixing_rate(kernel) -> float:
    """Geometric decay rate of the single-lineage kernel."""
    if isinstance(kernel, BarParams):
        return kernel.mixing_rate
    q = mean_kernel(kernel)
    eigvals = np.sort(np.abs(np.linalg.eigvals(q)))[::-1]
    return float(eigvals[1])


@dataclass
class FunctionalInfo:
    """Resolved functional plus the exact quantities runners rely on."""

    functional: Functional
    pf2: Functional | None = None
    variance: float | None = None  # (mu, Pf^2) for triangle kinds
    sup: float | None = None       # sup |f| when finite, else None
    centered: bool = False


def build_functional(kernel, spec: dict) -> FunctionalInfo:
    """Resolve a functional dict against a kernel.

    Single functionals may be centered against the stationary lineage
    law; triangle functionals may be centered by subtracting their
    conditional mean so the permuted sums are martingales.
    """
    kind = spec.get("kind", "single")
    center = bool(spec.get("center", False))
    if isinstance(kernel, FiniteKernel):
        if kind == "single":
            table = np.asarray(spec["table"], dtype=np.float64)
            f = (centered_functional(kernel, table) if center
                 else single_functional(table=table, name="table"))
            return FunctionalInfo(functional=f, sup=float(np.max(np.abs(f.table))),
                                  centered=center)
        table = np.asarray(spec["table"], dtype=np.float64)
        f = triangle_functional(table=table, name="triangle-table")
        if center:
            pf = apply_P(kernel, f)
            f = triangle_functional(table=table - pf.table[:, None, None],
                                    name="triangle-centered")
        f2 = triangle_functional(table=f.table**2, name="triangle-sq")
        pf2 = apply_P(kernel, f2)
        mu = stationary_distribution(mean_kernel(kernel))
        return FunctionalInfo(
            functional=f, pf2=pf2, variance=float(mu @ pf2.table),
            sup=float(np.max(np.abs(f.table))), centered=center,
        )
    if not isinstance(kernel, BarParams):
        raise TypeError(f"unsupported kernel type {type(kernel).__name__}")
    eff = noise_moments(kernel)
    if kind == "single":
        name = spec.get("name", "x")
        mu1, mu2 = stationary_moments(kernel.theta, eff["sigma2"])
        if name == "x":
            shift = mu1 if center else 0.0
            f = single_functional(fn=lambda v, s=shift: np.asarray(v) - s, name="x")
        elif name == "x_sq":
            shift = mu2 if center else 0.0
            f = single_functional(fn=lambda v, s=shift: np.asarray(v) ** 2 - s,
                                  name="x_sq")
        else:
            raise ValueError(f"unknown single functional {name!r} for BAR models")
        return FunctionalInfo(functional=f, centered=center)
    name = spec.get("name", "residual0")
    if name in ("residual0", "residual1"):
        which = 0 if name == "residual0" else 1
        f = bar_residual_functional(kernel, which)
        s2 = eff["sigma2"]
        pf2 = single_functional(fn=lambda v, s2=s2: np.full(np.shape(v), s2),
                                name="noise-variance")
        sup = None
        if kernel.noise_family in ("truncated-gaussian", "uniform-box"):
            sup = kernel.noise_bound
        return FunctionalInfo(functional=f, pf2=pf2, variance=s2, sup=sup,
                              centered=True)
    raise ValueError(f"unknown triangle functional {name!r} for BAR models")
