"""Empirical averages over tree populations and the permuted martingale.

Three averages are exposed: over one generation, over the whole subtree,
and over the first ``n`` nodes of a generation-preserving random order.
Triangle functionals consume the mother value together with both
daughter values, so averaging them over the subtree through generation
``r`` requires the population to be observed through ``r + 1``; the
module enforces this instead of silently truncating.

Tree-wide sums use compensated (exactly rounded) summation so the exact
regrouping identities hold to 1e-12 even for million-term sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import Functional
from .simulate import TreePopulation
from .tree import GenerationPermutation, subtree_size


def _fsum(values: np.ndarray) -> float:
    return math.fsum(values.tolist())


def functional_values(pop: TreePopulation, f: Functional, through: int) -> np.ndarray:
    """Evaluate ``f`` at every node of the subtree through ``through``.

    Single functionals need ``pop.depth >= through``; triangle
    functionals additionally need the daughters, i.e.
    ``pop.depth >= through + 1``.
    """
    if through < 0:
        raise ValueError("generation index must be >= 0")
    size = subtree_size(through)
    if f.kind == "single":
        if pop.depth < through:
            raise ValueError(
                f"population depth {pop.depth} < requested generation {through}"
            )
        return f(pop.values[:size])
    if pop.depth < through + 1:
        raise ValueError(
            f"triangle functional through generation {through} needs depth "
            f"{through + 1}, population has {pop.depth}"
        )
    x = pop.values[:size]
    y = pop.values[1 : 2 * size : 2]
    z = pop.values[2 : 2 * size + 1 : 2]
    return f(x, y, z)


def mean_generation(pop: TreePopulation, f: Functional, r: int) -> float:
    """Average of ``f`` over generation ``r``."""
    vals = functional_values(pop, f, r)
    return _fsum(vals[2**r - 1 :]) / 2**r


def mean_tree(pop: TreePopulation, f: Functional, r: int) -> float:
    """Average of ``f`` over the subtree through generation ``r``."""
    vals = functional_values(pop, f, r)
    return _fsum(vals) / subtree_size(r)


def mean_permuted(pop: TreePopulation, f: Functional,
                  pi: GenerationPermutation, n: int) -> float:
    """Average of ``f`` over the first ``n`` nodes in permuted order.

    Because the order preserves generations, a prefix of length ``n``
    covers exactly the nodes of generations 0 .. floor(log2 n); triangle
    functionals therefore cap ``n`` one generation earlier than single
    ones.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    depth = pi.depth
    if f.kind == "single":
        limit, through = subtree_size(depth), depth
    else:
        limit, through = subtree_size(depth) // 2, depth - 1
    if n > limit:
        raise ValueError(
            f"n = {n} exceeds the permuted range ({limit}) for a {f.kind} functional"
        )
    vals = functional_values(pop, f, through)
    order = pi.mapping[:n]
    return _fsum(vals[order - 1]) / n


@dataclass
class MartingalePath:
    """Running sums of permuted triangle increments and their bracket.

    ``increments[k-1]`` is the k-th increment, ``partial_sums[k]`` the
    sum of the first ``k`` (``partial_sums[0] = 0``), and ``bracket[k]``
    the running sum of the conditional second moments evaluated at the
    permuted mothers.
    """

    increments: np.ndarray
    partial_sums: np.ndarray
    bracket: np.ndarray

    def __post_init__(self):
        n = len(self.increments)
        if self.partial_sums.shape != (n + 1,) or self.bracket.shape != (n + 1,):
            raise ValueError("partial sums and bracket must have n + 1 entries")
        if self.partial_sums[0] != 0.0 or self.bracket[0] != 0.0:
            raise ValueError("paths must start at 0")
        steps = np.diff(self.bracket)
        if steps.size and steps.min() < -1e-12:
            raise ValueError("bracket must be nondecreasing")


def martingale_path(pop: TreePopulation, f: Functional,
                    pi: GenerationPermutation, n: int,
                    pf2: Functional) -> MartingalePath:
    """Path of the permuted martingale of a centered triangle functional.

    ``pf2`` must be the conditional second moment of ``f`` (a single
    functional); centering of ``f`` itself is the caller's contract and
    is validated statistically by the test suite, not here.
    """
    if f.kind != "triangle":
        raise ValueError("martingale increments come from a triangle functional")
    if pf2.kind != "single":
        raise ValueError("the bracket integrand is a single-state functional")
    if n < 1:
        raise ValueError("n must be >= 1")
    limit = subtree_size(pi.depth) // 2
    if n > limit:
        raise ValueError(f"n = {n} exceeds the permuted triangle range ({limit})")
    order = pi.mapping[:n]
    tri = functional_values(pop, f, pi.depth - 1)[order - 1]
    pf2_vals = pf2(pop.values[order - 1])
    if pf2_vals.min() < -1e-12:
        raise ValueError("conditional second moment must be nonnegative")
    sums = np.concatenate([[0.0], np.cumsum(tri)])
    bracket = np.concatenate([[0.0], np.cumsum(np.maximum(pf2_vals, 0.0))])
    return MartingalePath(increments=tri, partial_sums=sums, bracket=bracket)
