"""Tree population and tagged-branch simulation.

Simulation is generation-major: the root is drawn from the initial law,
then each generation's daughters are drawn with one independent kernel
call per mother.  A batched variant simulates many replications at once
as a ``(n_replications, n_nodes)`` matrix, which is what the Monte Carlo
harness uses.

Randomness contract: every stream is derived from a root seed and an
integer derivation path through :func:`derive_rng`, so replications and
batches can be generated out of order, in parallel, and still reproduce
bit-identically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .kernels import BarParams, FiniteKernel, sample_noise_pairs
from .tree import subtree_size

MAX_DEPTH = 24


class DepthLimitError(ValueError):
    """Raised when a requested tree would exceed the resource guard."""


def _path_token(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("derivation path parts must be nonnegative")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"unsupported derivation path part {part!r}")


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Deterministic stream derived from a root seed and a path.

    Path parts may be nonnegative integers or strings (hashed with
    sha256, independent of PYTHONHASHSEED).
    """
    entropy = [_path_token(seed)] + [_path_token(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class TreePopulation:
    """Values of a bifurcating chain on the complete tree.

    ``values[i-1]`` is the value at node ``i`` (heap layout); real-valued
    for BAR models, integer state indices for finite kernels.
    """

    depth: int
    values: np.ndarray
    model: BarParams | FiniteKernel | None = None
    seed_path: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (subtree_size(self.depth),):
            raise ValueError(
                f"expected {subtree_size(self.depth)} values for depth {self.depth}, "
                f"got {self.values.shape}"
            )

    def __len__(self) -> int:
        return len(self.values)

    def value(self, node: int):
        return self.values[node - 1]

    def layer_values(self, r: int) -> np.ndarray:
        """Values of generation ``r`` in node-id order."""
        if r > self.depth:
            raise ValueError(f"population has depth {self.depth}, asked for {r}")
        return self.values[2**r - 1 : 2 ** (r + 1) - 1]

    def to_csv(self, path) -> None:
        """Write ``node,value`` rows in increasing node-id order."""
        with open(path, "w") as fh:
            fh.write("node,value\n")
            if np.issubdtype(self.values.dtype, np.integer):
                for i, v in enumerate(self.values, start=1):
                    fh.write(f"{i},{int(v)}\n")
            else:
                for i, v in enumerate(self.values, start=1):
                    fh.write(f"{i},{float(v)!r}\n")


def population_from_csv(path) -> TreePopulation:
    """Read a ``node,value`` CSV; ids must be exactly 1..2^(d+1)-1.

    Raises ``IncompleteTreeError`` listing missing ids if the file does
    not cover a complete tree.
    """
    nodes, vals = [], []
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "node,value":
            raise ValueError(f"{path}: expected header 'node,value'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, b = line.split(",")
            nodes.append(int(a))
            vals.append(float(b))
    if not nodes:
        raise ValueError(f"{path}: no rows")
    ids = np.array(nodes)
    if np.any(ids < 1):
        raise ValueError(f"{path}: node ids must be >= 1")
    depth = int(ids.max()).bit_length() - 1
    expected = subtree_size(depth)
    present = set(nodes)
    if len(present) != len(nodes):
        dupes = sorted({n for n in nodes if nodes.count(n) > 1})
        raise IncompleteTreeError(f"duplicate node ids: {dupes}", missing=[])
    missing = sorted(set(range(1, expected + 1)) - present)
    extra = sorted(present - set(range(1, expected + 1)))
    if missing or extra:
        raise IncompleteTreeError(
            f"tree through depth {depth} needs ids 1..{expected}; "
            f"missing {missing}, unexpected {extra}",
            missing=missing,
        )
    values = np.empty(expected, dtype=np.float64)
    values[ids - 1] = np.array(vals)
    return TreePopulation(depth=depth, values=values)


class IncompleteTreeError(ValueError):
    def __init__(self, message, missing):
        super().__init__(message)
        self.missing = missing


# ---------------------------------------------------------------------------
# Batched simulation (one matrix row per replication)


def _finite_root(kernel: FiniteKernel, n: int, rng) -> np.ndarray:
    cum = np.cumsum(kernel.nu)
    return np.searchsorted(cum, rng.random(n), side="right").astype(np.int64)


def _finite_children(kernel: FiniteKernel, mothers: np.ndarray, rng):
    m = kernel.n_states
    pair_cum = np.cumsum(kernel.p.reshape(m, m * m), axis=1)
    rows = pair_cum[mothers]
    u = rng.random(mothers.shape)
    w = (rows < u[..., None]).sum(axis=-1)
    np.clip(w, 0, m * m - 1, out=w)
    return w // m, w % m


def simulate_trees(kernel, depth: int, n_replications: int, rng,
                   initial=None, max_depth: int = MAX_DEPTH) -> np.ndarray:
    """Simulate ``n_replications`` independent trees as a value matrix.

    Returns shape ``(n_replications, 2^(depth+1)-1)``; column ``i-1``
    holds node ``i``.  ``initial`` overrides the kernel's initial law
    (an initial-law object for BAR, a probability vector for finite
    kernels).
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if depth > max_depth:
        raise DepthLimitError(
            f"depth {depth} exceeds the resource guard ({max_depth}); "
            "raise max_depth explicitly if intended"
        )
    size = subtree_size(depth)
    if isinstance(kernel, FiniteKernel):
        vals = np.empty((n_replications, size), dtype=np.int64)
        if initial is None:
            vals[:, 0] = _finite_root(kernel, n_replications, rng)
        else:
            cum = np.cumsum(np.asarray(initial, dtype=np.float64))
            vals[:, 0] = np.searchsorted(cum, rng.random(n_replications), side="right")
        for q in range(depth):
            mothers = vals[:, 2**q - 1 : 2 ** (q + 1) - 1]
            y, z = _finite_children(kernel, mothers, rng)
            block = vals[:, 2 ** (q + 1) - 1 : 2 ** (q + 2) - 1]
            block.reshape(n_replications, 2**q, 2)[:, :, 0] = y
            block.reshape(n_replications, 2**q, 2)[:, :, 1] = z
        return vals
    if isinstance(kernel, BarParams):
        law = kernel.initial_law if initial is None else initial
        vals = np.empty((n_replications, size), dtype=np.float64)
        vals[:, 0] = law.sample(n_replications, rng)
        for q in range(depth):
            mothers = vals[:, 2**q - 1 : 2 ** (q + 1) - 1]
            e0, e1 = sample_noise_pairs(kernel, mothers.size, rng)
            y = kernel.alpha0 * mothers + kernel.beta0 + e0.reshape(mothers.shape)
            z = kernel.alpha1 * mothers + kernel.beta1 + e1.reshape(mothers.shape)
            block = vals[:, 2 ** (q + 1) - 1 : 2 ** (q + 2) - 1]
            block.reshape(n_replications, 2**q, 2)[:, :, 0] = y
            block.reshape(n_replications, 2**q, 2)[:, :, 1] = z
        return vals
    raise TypeError(f"unsupported kernel type {type(kernel).__name__}")


def simulate_tree(kernel, depth: int, rng, initial=None,
                  max_depth: int = MAX_DEPTH, seed_path=()) -> TreePopulation:
    """Simulate one tree population (single-replication convenience)."""
    vals = simulate_trees(kernel, depth, 1, rng, initial=initial, max_depth=max_depth)
    return TreePopulation(depth=depth, values=vals[0], model=kernel,
                          seed_path=tuple(seed_path))


def simulate_tagged_chain(kernel, steps: int, rng, initial=None) -> np.ndarray:
    """Follow a random lineage: one step of the mean kernel per epoch.

    Returns the ``steps + 1`` visited states, starting with the initial
    draw.  For sampled kernels each step draws the daughter pair and
    keeps one daughter with a fair coin, which is exactly the mean of
    the two daughter marginals.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if isinstance(kernel, FiniteKernel):
        q = 0.5 * (kernel.marginal0() + kernel.marginal1())
        cum = np.cumsum(q, axis=1)
        top = kernel.n_states - 1
        nu = kernel.nu if initial is None else np.asarray(initial, dtype=np.float64)
        out = np.empty(steps + 1, dtype=np.int64)
        out[0] = min(np.searchsorted(np.cumsum(nu), rng.random(), side="right"), top)
        u = rng.random(steps)
        for t in range(steps):
            # min() guards the measure-zero case u above a rounded-down row sum
            out[t + 1] = min(np.searchsorted(cum[out[t]], u[t], side="right"), top)
        return out
    if isinstance(kernel, BarParams):
        law = kernel.initial_law if initial is None else initial
        out = np.empty(steps + 1, dtype=np.float64)
        out[0] = law.sample(1, rng)[0]
        e0, e1 = sample_noise_pairs(kernel, steps, rng)
        coins = rng.random(steps) < 0.5
        a0, b0, a1, b1 = kernel.theta
        x = out[0]
        for t in range(steps):
            if coins[t]:
                x = a0 * x + b0 + e0[t]
            else:
                x = a1 * x + b1 + e1[t]
            out[t + 1] = x
        return out
    raise TypeError(f"unsupported kernel type {type(kernel).__name__}")
