"""Bifurcating Markov chains on regular binary trees.

Simulation of tree-indexed autoregressions and finite-state kernels,
empirical averages and permuted martingales, exact enumeration oracles,
least-squares inference with an asymmetry test, and a Monte Carlo
harness that checks the model's deviation bounds and limit-theorem
behavior at desk scale.
"""

from .inference import BifurcatingAutoregression
from .kernels import BarParams, FiniteKernel, Functional
from .simulate import TreePopulation, derive_rng, simulate_tree

__all__ = [
    "BarParams",
    "BifurcatingAutoregression",
    "FiniteKernel",
    "Functional",
    "TreePopulation",
    "derive_rng",
    "simulate_tree",
]

__version__ = "0.1.0"
