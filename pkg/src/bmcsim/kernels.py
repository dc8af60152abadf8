"""Mother-to-daughters transition kernels and test functionals.

Two kernel families are provided:

* :class:`BarParams` -- the first order bifurcating autoregression.  Each
  daughter is an affine function of the mother plus noise; the noise pair
  can be gaussian, gaussian truncated to a box, or uniform on a box (the
  latter two keep the chain in a compact set).
* :class:`FiniteKernel` -- an exact tensor ``p[x][y][z]`` on a finite
  state space, for which every conditional expectation is computable in
  closed form.

``Q`` denotes the single-lineage kernel, the arithmetic mean of the two
daughter marginals; following a uniformly chosen daughter at each step
produces a Markov chain with transition ``Q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, stats

ATOL = 1e-12

GAUSSIAN = "gaussian"
TRUNCATED_GAUSSIAN = "truncated-gaussian"
UNIFORM_BOX = "uniform-box"


@dataclass(frozen=True)
class PointMass:
    """Initial law concentrated at a single value."""

    x0: float

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return np.full(size, self.x0, dtype=np.float64)


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian initial law with mean ``m`` and variance ``v``."""

    m: float
    v: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("variance must be >= 0")

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.m + math.sqrt(self.v) * rng.standard_normal(size)


@dataclass(frozen=True)
class BarParams:
    """Parameters of the first order bifurcating autoregression.

    Daughters of a mother at ``x`` are ``alpha0*x + beta0 + e0`` and
    ``alpha1*x + beta1 + e1`` with noise pair ``(e0, e1)`` of covariance
    ``sigma2 * [[1, rho], [rho, 1]]`` (target covariance before
    truncation for the bounded families; see :func:`noise_moments`).

    ``sigma2 = 0`` is accepted as the degenerate noise-free recursion.
    ``mixing_rate`` = max(|alpha0|, |alpha1|) drives every ergodicity
    bound; it is clamped away from 0 by bound evaluators.
    """

    alpha0: float
    beta0: float
    alpha1: float
    beta1: float
    sigma2: float = 1.0
    rho: float = 0.0
    noise_family: str = GAUSSIAN
    noise_bound: float = 1.0
    initial_law: PointMass | GaussianLaw = field(default_factory=lambda: PointMass(0.0))

    def __post_init__(self):
        if not (abs(self.alpha0) < 1 and abs(self.alpha1) < 1):
            raise ValueError("autoregression slopes must lie in (-1, 1)")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.noise_family not in (GAUSSIAN, TRUNCATED_GAUSSIAN, UNIFORM_BOX):
            raise ValueError(f"unknown noise family {self.noise_family!r}")
        if self.noise_family != GAUSSIAN and self.noise_bound <= 0:
            raise ValueError("bounded noise families need a positive bound")

    @property
    def mixing_rate(self) -> float:
        return max(abs(self.alpha0), abs(self.alpha1))

    @property
    def theta(self) -> tuple[float, float, float, float]:
        return (self.alpha0, self.beta0, self.alpha1, self.beta1)


def sample_noise_pairs(
    params: BarParams, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``size`` i.i.d. noise pairs for the declared family."""
    if params.sigma2 == 0.0:
        zeros = np.zeros(size)
        return zeros, zeros.copy()
    sig = math.sqrt(params.sigma2)
    if params.noise_family == UNIFORM_BOX:
        h = params.noise_bound
        return rng.uniform(-h, h, size), rng.uniform(-h, h, size)
    cross = math.sqrt(1.0 - params.rho**2)
    z0 = rng.standard_normal(size)
    z1 = rng.standard_normal(size)
    e0 = sig * z0
    e1 = sig * (params.rho * z0 + cross * z1)
    if params.noise_family == GAUSSIAN:
        return e0, e1
    # Truncated gaussian: regenerate pairs falling outside the box.
    b = params.noise_bound
    bad = (np.abs(e0) > b) | (np.abs(e1) > b)
    guard = 0
    while np.any(bad):
        k = int(bad.sum())
        z0 = rng.standard_normal(k)
        z1 = rng.standard_normal(k)
        e0[bad] = sig * z0
        e1[bad] = sig * (params.rho * z0 + cross * z1)
        bad = (np.abs(e0) > b) | (np.abs(e1) > b)
        guard += 1
        if guard > 10_000:
            raise RuntimeError("truncation acceptance region has negligible mass")
    return e0, e1


def noise_moments(params: BarParams) -> dict[str, float]:
    """Effective moments of the noise pair actually sampled.

    For the gaussian family these are the declared ``(sigma2, rho)``.
    For the truncated family they are computed by quadrature of the
    bivariate normal restricted to the box; for the uniform box family
    the coordinates are independent, so the effective correlation is 0
    regardless of the declared ``rho``.
    """
    if params.sigma2 == 0.0:
        return {"mean": 0.0, "sigma2": 0.0, "rho": 0.0}
    if params.noise_family == GAUSSIAN:
        return {"mean": 0.0, "sigma2": params.sigma2, "rho": params.rho}
    if params.noise_family == UNIFORM_BOX:
        return {"mean": 0.0, "sigma2": params.noise_bound**2 / 3.0, "rho": 0.0}
    b = params.noise_bound
    cov = params.sigma2 * np.array([[1.0, params.rho], [params.rho, 1.0]])
    density = stats.multivariate_normal(mean=[0.0, 0.0], cov=cov).pdf

    def moment(g):
        val, _ = integrate.dblquad(
            lambda y, x: g(x, y) * density([x, y]), -b, b, -b, b,
            epsabs=1e-11, epsrel=1e-11,
        )
        return val

    mass = moment(lambda x, y: 1.0)
    second = moment(lambda x, y: x * x) / mass
    cross = moment(lambda x, y: x * y) / mass
    return {"mean": 0.0, "sigma2": second, "rho": cross / second}


def bar_sample(
    params: BarParams, x: float | np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw the daughter pair(s) of mother value(s) ``x``.

    Accepts a scalar or an array of mothers; one independent noise pair
    is drawn per mother.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    e0, e1 = sample_noise_pairs(params, x.size, rng)
    y = params.alpha0 * x + params.beta0 + e0.reshape(x.shape)
    z = params.alpha1 * x + params.beta1 + e1.reshape(x.shape)
    return y, z


# ---------------------------------------------------------------------------
# Finite state kernels


@dataclass(frozen=True)
class FiniteKernel:
    """Exact transition tensor on a finite state space.

    ``p[x, y, z]`` is the probability that a mother in state ``x`` has
    daughters ``(y, z)``; every slice ``p[x]`` must sum to 1.  ``nu`` is
    the initial law of the root.
    """

    p: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        nu = np.asarray(self.nu, dtype=np.float64)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "nu", nu)
        m = p.shape[0]
        if m < 2 or p.shape != (m, m, m):
            raise ValueError("transition tensor must have shape (m, m, m), m >= 2")
        if nu.shape != (m,):
            raise ValueError("initial law must have one weight per state")
        if np.any(p < 0) or np.any(nu < 0):
            raise ValueError("probabilities must be nonnegative")
        sums = p.reshape(m, -1).sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > ATOL:
            raise ValueError("every tensor slice must sum to 1 within 1e-12")
        if abs(nu.sum() - 1.0) > ATOL:
            raise ValueError("initial law must sum to 1 within 1e-12")

    @property
    def n_states(self) -> int:
        return self.p.shape[0]

    def marginal0(self) -> np.ndarray:
        """Transition matrix of the first daughter."""
        return self.p.sum(axis=2)

    def marginal1(self) -> np.ndarray:
        """Transition matrix of the second daughter."""
        return self.p.sum(axis=1)


def load_finite_kernel(path) -> FiniteKernel:
    """Read a finite kernel from a whitespace-separated text file.

    Layout: first line ``m``, then ``m`` blocks of ``m x m`` rows (the
    tensor slices ``p[x]``), then one row with the initial law.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens:
        raise ValueError(f"{path}: empty kernel file")
    m = int(tokens[0])
    need = 1 + m * m * m + m
    if len(tokens) != need:
        raise ValueError(
            f"{path}: expected {need} numbers for m={m}, found {len(tokens)}"
        )
    vals = np.array([float(t) for t in tokens[1:]])
    p = vals[: m * m * m].reshape(m, m, m)
    nu = vals[m * m * m :]
    return FiniteKernel(p=p, nu=nu)


def save_finite_kernel(kernel: FiniteKernel, path) -> None:
    """Write a finite kernel in the format read by :func:`load_finite_kernel`."""
    m = kernel.n_states
    lines = [str(m)]
    for x in range(m):
        for y in range(m):
            lines.append(" ".join(repr(float(v)) for v in kernel.p[x, y]))
    lines.append(" ".join(repr(float(v)) for v in kernel.nu))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def mean_kernel(kernel: FiniteKernel | BarParams):
    """Single-lineage kernel: the mean of the two daughter marginals.

    For a finite kernel this is the exact row-stochastic matrix
    ``Q = (P0 + P1) / 2``.  For a BAR kernel there is no finite matrix;
    the returned object samples one step by drawing the daughter pair
    and keeping one daughter with a fair coin.
    """
    if isinstance(kernel, FiniteKernel):
        return 0.5 * (kernel.marginal0() + kernel.marginal1())
    if isinstance(kernel, BarParams):
        return _BarLineageSampler(kernel)
    raise TypeError(f"unsupported kernel type {type(kernel).__name__}")


class _BarLineageSampler:
    """Fair-coin daughter selection for the BAR chain."""

    def __init__(self, params: BarParams):
        self.params = params

    def step(self, x, rng: np.random.Generator) -> np.ndarray:
        y, z = bar_sample(self.params, x, rng)
        take_first = rng.random(y.shape) < 0.5
        return np.where(take_first, y, z)


# ---------------------------------------------------------------------------
# Functionals


@dataclass(frozen=True)
class Functional:
    """A scalar test function on states or on mother-daughter triangles.

    ``kind`` is ``"single"`` (a map on states) or ``"triangle"`` (a map
    on ``(mother, daughter0, daughter1)``).  ``fn`` must be a vectorized
    evaluator; for finite-state functionals an exact value ``table`` may
    be attached (shape ``(m,)`` or ``(m, m, m)``), in which case ``fn``
    defaults to a table lookup.
    """

    kind: str
    fn: Callable | None = None
    table: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("single", "triangle"):
            raise ValueError(f"kind must be 'single' or 'triangle', got {self.kind!r}")
        if self.fn is None and self.table is None:
            raise ValueError("functional needs an evaluator or a table")
        if self.table is not None:
            table = np.asarray(self.table, dtype=np.float64)
            want = 1 if self.kind == "single" else 3
            if table.ndim != want:
                raise ValueError(f"{self.kind} table must have {want} axes")
            object.__setattr__(self, "table", table)

    def __call__(self, *args) -> np.ndarray:
        want = 1 if self.kind == "single" else 3
        if len(args) != want:
            raise ValueError(f"{self.kind} functional takes {want} argument(s)")
        if self.fn is not None:
            return np.asarray(self.fn(*args), dtype=np.float64)
        if self.kind == "single":
            return self.table[np.asarray(args[0], dtype=np.intp)]
        x, y, z = (np.asarray(a, dtype=np.intp) for a in args)
        return self.table[x, y, z]


def single_functional(fn=None, table=None, name="") -> Functional:
    return Functional(kind="single", fn=fn, table=table, name=name)


def triangle_functional(fn=None, table=None, name="") -> Functional:
    return Functional(kind="triangle", fn=fn, table=table, name=name)


def apply_P(kernel: FiniteKernel, f: Functional) -> Functional:
    """Integrate a triangle functional over the daughter pair.

    Returns the single-state functional
    ``x -> sum_{y,z} f(x, y, z) p[x, y, z]`` as an exact table.
    """
    if f.kind != "triangle":
        raise ValueError("apply_P needs a triangle functional")
    table = f.table
    if table is None:
        m = kernel.n_states
        grid = np.indices((m, m, m))
        table = f(grid[0], grid[1], grid[2])
    g = np.einsum("xyz,xyz->x", kernel.p, table)
    return single_functional(table=g, name=f"P[{f.name}]")


def apply_Q_power(kernel: FiniteKernel, f: Functional, k: int) -> Functional:
    """Apply the single-lineage kernel ``k`` times to a state functional."""
    if f.kind != "single":
        raise ValueError("apply_Q_power needs a single-state functional")
    if k < 0:
        raise ValueError("power must be >= 0")
    if f.table is None:
        raise ValueError("finite-state application needs a table functional")
    q = mean_kernel(kernel)
    g = f.table.copy()
    for _ in range(k):
        g = q @ g
    return single_functional(table=g, name=f"Q^{k}[{f.name}]")


# Named conditional moments of the BAR kernel: each entry maps the
# parameters to polynomial coefficients (c0, c1, c2) of the conditional
# expectation c0 + c1*x + c2*x^2 given the mother value x.
def _bar_moment_coeffs(params: BarParams, name: str) -> tuple[float, float, float]:
    eff = noise_moments(params)
    s2, rh = eff["sigma2"], eff["rho"]
    a0, b0, a1, b1 = params.theta
    if name == "y":
        return (b0, a0, 0.0)
    if name == "z":
        return (b1, a1, 0.0)
    if name == "xy":
        return (0.0, b0, a0)
    if name == "xz":
        return (0.0, b1, a1)
    if name == "residual0":
        return (0.0, 0.0, 0.0)
    if name == "residual1":
        return (0.0, 0.0, 0.0)
    if name == "residual0_sq":
        return (s2, 0.0, 0.0)
    if name == "residual1_sq":
        return (s2, 0.0, 0.0)
    if name == "residual0_residual1":
        return (rh * s2, 0.0, 0.0)
    raise ValueError(f"unsupported named moment {name!r}")


def bar_conditional_moment(params: BarParams, name: str) -> Functional:
    """Closed-form conditional expectation of a named triangle functional.

    Supported names: ``y``, ``z``, ``xy``, ``xz``, ``residual0``,
    ``residual1``, ``residual0_sq``, ``residual1_sq``,
    ``residual0_residual1``.  Residuals are taken against the true
    parameters, e.g. ``residual0 = y - alpha0*x - beta0``; their moments
    use the effective noise moments of the declared family.
    """
    c0, c1, c2 = _bar_moment_coeffs(params, name)
    return single_functional(
        fn=lambda x, c0=c0, c1=c1, c2=c2: c0 + c1 * np.asarray(x, dtype=np.float64)
        + c2 * np.asarray(x, dtype=np.float64) ** 2,
        name=f"P[{name}]",
    )


def bar_residual_functional(params: BarParams, which: int) -> Functional:
    """Triangle functional ``daughter - conditional mean`` for one daughter.

    ``which = 0`` gives ``y - alpha0*x - beta0``; these functionals are
    exactly centered (their P-image vanishes identically), which makes
    them the canonical martingale increments for the BAR model.
    """
    if which == 0:
        a, b = params.alpha0, params.beta0
        return triangle_functional(
            fn=lambda x, y, z, a=a, b=b: np.asarray(y, dtype=np.float64)
            - a * np.asarray(x, dtype=np.float64) - b,
            name="residual0",
        )
    if which == 1:
        a, b = params.alpha1, params.beta1
        return triangle_functional(
            fn=lambda x, y, z, a=a, b=b: np.asarray(z, dtype=np.float64)
            - a * np.asarray(x, dtype=np.float64) - b,
            name="residual1",
        )
    raise ValueError("which must be 0 or 1")
