"""Tree index arithmetic and generation-preserving permutations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmcsim import tree


def test_generation_known_values():
    assert tree.generation(1) == 0
    assert tree.generation(5) == 2
    assert tree.generation(1024) == 10


def test_generation_rejects_below_root():
    with pytest.raises(tree.InvalidNodeError):
        tree.generation(0)


def test_layer_bounds_and_sizes():
    assert list(tree.layer(0)) == [1]
    assert tree.layer(3) == range(8, 16)
    assert tree.layer_size(3) == 8
    assert tree.subtree_size(3) == 15


def test_layer_sizes_accumulate_to_subtree():
    for r in range(12):
        assert sum(tree.layer_size(q) for q in range(r + 1)) == tree.subtree_size(r)


def test_triangle_indices():
    assert tree.triangle_indices(1) == (1, 2, 3)
    assert tree.triangle_indices(5) == (5, 10, 11)
    with pytest.raises(tree.InvalidNodeError):
        tree.triangle_indices(0)


@given(st.integers(min_value=1, max_value=2**40))
def test_parent_child_roundtrip(n):
    left, right = tree.children(n)
    assert tree.parent(left) == n
    assert tree.parent(right) == n
    assert tree.generation(left) == tree.generation(n) + 1


@given(st.integers(min_value=0, max_value=20))
def test_generation_matches_layer_membership(r):
    lo, hi = 2**r, 2 ** (r + 1) - 1
    assert tree.generation(lo) == r
    assert tree.generation(hi) == r


def test_permutation_depth_zero_is_identity():
    rng = np.random.default_rng(0)
    pi = tree.sample_permutation(0, rng)
    assert pi.apply(1) == 1


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=7), st.integers(min_value=0, max_value=2**32 - 1))
def test_permutation_preserves_generations(depth, seed):
    pi = tree.sample_permutation(depth, np.random.default_rng(seed))
    for i in range(1, tree.subtree_size(depth) + 1):
        assert tree.generation(pi.apply(i)) == tree.generation(i)


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=7), st.integers(min_value=0, max_value=2**32 - 1))
def test_permutation_composed_with_inverse_is_identity(depth, seed):
    pi = tree.sample_permutation(depth, np.random.default_rng(seed))
    inv = pi.inverse()
    ids = np.arange(1, tree.subtree_size(depth) + 1)
    assert np.array_equal(inv.mapping[pi.mapping - 1], ids)
    assert np.array_equal(pi.mapping[inv.mapping - 1], ids)


def test_permutation_layers_are_bijections():
    pi = tree.sample_permutation(6, np.random.default_rng(3))
    for q in range(7):
        block = pi.mapping[2**q - 1 : 2 ** (q + 1) - 1]
        assert sorted(block) == list(tree.layer(q))


def test_permutation_uniform_on_first_layer():
    # Both orderings of {2, 3} should appear with frequency 1/2 +- 0.02.
    rng = np.random.default_rng(2024)
    hits = sum(tree.sample_permutation(1, rng).apply(2) == 2 for _ in range(10_000))
    assert abs(hits / 10_000 - 0.5) < 0.02
