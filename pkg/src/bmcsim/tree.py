"""Index arithmetic on the complete binary tree.

Nodes are positive integers in heap layout: node ``n`` has daughters
``2n`` and ``2n+1``, the root is ``1``.  Generation ``r`` is the block
``{2^r, ..., 2^(r+1)-1}`` of size ``2^r``; the subtree through
generation ``r`` has ``2^(r+1)-1`` nodes.  Flat arrays store the value
of node ``n`` at slot ``n-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidNodeError(ValueError):
    """Raised for node ids below the root."""


def generation(n: int) -> int:
    """Return the generation (tree depth) of node ``n``, i.e. floor(log2 n)."""
    if n < 1:
        raise InvalidNodeError(f"node ids start at 1, got {n}")
    return int(n).bit_length() - 1


def layer(r: int) -> range:
    """Return the node ids of generation ``r`` as a contiguous range."""
    if r < 0:
        raise ValueError(f"generation index must be >= 0, got {r}")
    return range(2**r, 2 ** (r + 1))


def layer_size(r: int) -> int:
    """Number of nodes in generation ``r``."""
    if r < 0:
        raise ValueError(f"generation index must be >= 0, got {r}")
    return 2**r


def subtree_size(r: int) -> int:
    """Number of nodes in the complete subtree through generation ``r``."""
    if r < 0:
        raise ValueError(f"generation index must be >= 0, got {r}")
    return 2 ** (r + 1) - 1


def parent(n: int) -> int:
    """Return the mother of node ``n`` (n > 1)."""
    if n < 2:
        raise InvalidNodeError(f"node {n} has no parent")
    return n // 2


def children(n: int) -> tuple[int, int]:
    """Return the two daughters ``(2n, 2n+1)`` of node ``n``."""
    if n < 1:
        raise InvalidNodeError(f"node ids start at 1, got {n}")
    return 2 * n, 2 * n + 1


def triangle_indices(i: int) -> tuple[int, int, int]:
    """Return the mother-daughters triangle ``(i, 2i, 2i+1)``."""
    if i < 1:
        raise InvalidNodeError(f"node ids start at 1, got {i}")
    return i, 2 * i, 2 * i + 1


@dataclass(frozen=True)
class GenerationPermutation:
    """A random order on the tree that leaves every generation invariant.

    ``mapping[i-1]`` is the image of node ``i``; restricted to each
    generation the mapping is a bijection of that generation onto itself,
    so prefixes of the permuted order never mix generations.

    Attributes
    ----------
    depth : int
        Largest generation covered; the mapping has ``2^(depth+1)-1`` slots.
    mapping : np.ndarray
        int64 array, ``mapping[i-1]`` = image of node ``i``.
    """

    depth: int
    mapping: np.ndarray

    def __post_init__(self):
        size = subtree_size(self.depth)
        if self.mapping.shape != (size,):
            raise ValueError(
                f"mapping must have {size} entries for depth {self.depth}"
            )

    def apply(self, i: int) -> int:
        """Return the image of node ``i``."""
        if not 1 <= i <= len(self.mapping):
            raise InvalidNodeError(f"node {i} outside permuted range")
        return int(self.mapping[i - 1])

    def permuted_order(self) -> np.ndarray:
        """Node ids listed in permuted order: mapping of 1, 2, 3, ..."""
        return self.mapping.copy()

    def inverse(self) -> "GenerationPermutation":
        """Return the inverse permutation."""
        inv = np.empty_like(self.mapping)
        inv[self.mapping - 1] = np.arange(1, len(self.mapping) + 1)
        return GenerationPermutation(self.depth, inv)


def sample_permutation(depth: int, rng: np.random.Generator) -> GenerationPermutation:
    """Draw a uniform generation-preserving permutation of the tree.

    Each generation is shuffled independently (Fisher-Yates via the
    supplied generator), which is exactly a uniform draw from the set of
    permutations that leave every generation invariant.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    mapping = np.empty(subtree_size(depth), dtype=np.int64)
    for q in range(depth + 1):
        ids = np.arange(2**q, 2 ** (q + 1), dtype=np.int64)
        mapping[2**q - 1 : 2 ** (q + 1) - 1] = rng.permutation(ids)
    return GenerationPermutation(depth, mapping)
