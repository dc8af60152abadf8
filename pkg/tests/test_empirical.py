"""Empirical averages, permuted means and the martingale bracket."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmcsim.empirical import (
    MartingalePath,
    martingale_path,
    mean_generation,
    mean_permuted,
    mean_tree,
)
from bmcsim.kernels import (
    BarParams,
    GaussianLaw,
    PointMass,
    bar_conditional_moment,
    bar_residual_functional,
    single_functional,
    triangle_functional,
)
from bmcsim.simulate import TreePopulation, derive_rng, simulate_tree, simulate_trees
from bmcsim.tree import sample_permutation, subtree_size

IDENTITY = single_functional(fn=lambda x: np.asarray(x, dtype=np.float64), name="x")


def fixed_population(depth=3):
    values = np.arange(1.0, subtree_size(depth) + 1.0)
    return TreePopulation(depth=depth, values=values)


def test_mean_generation_arithmetic():
    pop = TreePopulation(depth=2, values=np.array([0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]))
    assert mean_generation(pop, IDENTITY, 2) == pytest.approx(2.5, abs=0)


def test_mean_generation_constant():
    const = single_functional(fn=lambda x: np.full(np.shape(x), 3.25))
    pop = fixed_population(4)
    for r in range(5):
        assert mean_generation(pop, const, r) == pytest.approx(3.25, abs=0)


def test_mean_tree_small_example():
    pop = TreePopulation(depth=1, values=np.array([1.0, 2.0, 3.0]))
    assert mean_tree(pop, IDENTITY, 1) == pytest.approx(2.0, abs=0)


def test_mean_tree_regroups_generation_means():
    rng = derive_rng(21, "regroup")
    params = BarParams(0.7, 0.2, -0.5, 1.0, rho=0.4, initial_law=GaussianLaw(0, 1))
    pop = simulate_tree(params, 10, rng)
    r = 10
    total = sum(
        2**q * mean_generation(pop, IDENTITY, q) for q in range(r + 1)
    ) / subtree_size(r)
    assert mean_tree(pop, IDENTITY, r) == pytest.approx(total, abs=1e-12)


def test_insufficient_depth_raises():
    pop = fixed_population(2)
    with pytest.raises(ValueError):
        mean_generation(pop, IDENTITY, 3)
    tri = triangle_functional(fn=lambda x, y, z: np.asarray(y, float))
    with pytest.raises(ValueError):
        mean_generation(pop, tri, 2)


def test_triangle_mean_on_noise_free_tree():
    # First-daughter values over a noise-free tree reproduce the affine map.
    params = BarParams(0.5, 1.0, -0.25, 2.0, sigma2=0.0, initial_law=PointMass(1.0))
    pop = simulate_tree(params, 4, derive_rng(0))
    f_y = triangle_functional(fn=lambda x, y, z: np.asarray(y, float))
    for r in range(4):
        want = 0.5 * mean_generation(pop, IDENTITY, r) + 1.0
        assert mean_generation(pop, f_y, r) == pytest.approx(want, abs=1e-12)


def test_permuted_mean_full_prefix_matches_tree_mean():
    pop = fixed_population(5)
    for seed in range(3):
        pi = sample_permutation(5, derive_rng(seed, "pi"))
        got = mean_permuted(pop, IDENTITY, pi, subtree_size(5))
        assert got == pytest.approx(mean_tree(pop, IDENTITY, 5), abs=1e-12)


def test_permuted_mean_complete_prefixes_are_exactly_order_independent():
    # Compensated summation makes every complete-generation prefix mean
    # bit-identical across permutations, not merely close.
    params = BarParams(0.6, 0.5, -0.4, 1.0, rho=0.3,
                       initial_law=GaussianLaw(0.0, 2.0))
    pop = simulate_tree(params, 7, derive_rng(42, "exact-pi"))
    pi_a = sample_permutation(7, derive_rng(1, "pa"))
    pi_b = sample_permutation(7, derive_rng(2, "pb"))
    for q in range(8):
        n = subtree_size(q)
        assert (mean_permuted(pop, IDENTITY, pi_a, n)
                == mean_permuted(pop, IDENTITY, pi_b, n))


def test_permuted_mean_prefix_one_is_root():
    pop = fixed_population(3)
    pi = sample_permutation(3, derive_rng(4, "pi"))
    assert mean_permuted(pop, IDENTITY, pi, 1) == pytest.approx(1.0, abs=0)


def test_permuted_mean_decomposition():
    # Complete-generation part plus the partial last generation.
    pop = fixed_population(6)
    pi = sample_permutation(6, derive_rng(8, "pi"))
    n = 97  # covers generations 0..5 completely plus part of generation 6
    rn = 6
    head = sum(2**q * mean_generation(pop, IDENTITY, q) for q in range(rn))
    order = pi.mapping[2**rn - 1 : n]
    tail = float(np.sum(pop.values[order - 1]))
    assert mean_permuted(pop, IDENTITY, pi, n) == pytest.approx(
        (head + tail) / n, abs=1e-12
    )


def test_permuted_mean_range_checks():
    pop = fixed_population(3)
    pi = sample_permutation(3, derive_rng(0, "pi"))
    with pytest.raises(ValueError):
        mean_permuted(pop, IDENTITY, pi, subtree_size(3) + 1)
    tri = triangle_functional(fn=lambda x, y, z: np.asarray(y, float))
    with pytest.raises(ValueError):
        mean_permuted(pop, tri, pi, 8)  # above 2^3 - 1


@settings(max_examples=20)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_means_are_linear_in_the_functional(a, b):
    pop = fixed_population(4)
    f = single_functional(fn=lambda x: np.asarray(x, float))
    g = single_functional(fn=lambda x: np.asarray(x, float) ** 2)
    combo = single_functional(fn=lambda x: a * np.asarray(x, float)
                              + b * np.asarray(x, float) ** 2)
    want = a * mean_tree(pop, f, 4) + b * mean_tree(pop, g, 4)
    assert mean_tree(pop, combo, 4) == pytest.approx(want, abs=1e-12)


def test_martingale_bracket_with_constant_variance():
    params = BarParams(0.5, 1.0, -0.25, 2.0, sigma2=1.3, rho=0.2,
                       initial_law=GaussianLaw(0, 1))
    pop = simulate_tree(params, 7, derive_rng(0, "mart"))
    pi = sample_permutation(7, derive_rng(1, "mart"))
    f = bar_residual_functional(params, 0)
    pf2 = bar_conditional_moment(params, "residual0_sq")
    n = 100
    path = martingale_path(pop, f, pi, n, pf2)
    assert path.bracket[-1] == pytest.approx(n * 1.3, rel=1e-12)
    assert np.allclose(np.diff(path.partial_sums), path.increments, atol=0)
    assert np.all(np.diff(path.bracket) >= 0)


def test_martingale_full_tree_sum_matches_unpermuted():
    params = BarParams(0.5, 1.0, -0.25, 2.0, sigma2=1.0, initial_law=PointMass(0.0))
    pop = simulate_tree(params, 6, derive_rng(2, "mart"))
    pi = sample_permutation(6, derive_rng(3, "mart"))
    f = bar_residual_functional(params, 0)
    pf2 = bar_conditional_moment(params, "residual0_sq")
    n = subtree_size(5)
    path = martingale_path(pop, f, pi, n, pf2)
    x = pop.values[:n]
    y = pop.values[1 : 2 * n : 2]
    direct = float(np.sum(y - 0.5 * x - 1.0))
    assert path.partial_sums[-1] == pytest.approx(direct, abs=1e-9)


def test_martingale_increments_are_centered_at_mc_scale():
    params = BarParams(0.5, 1.0, -0.25, 2.0, sigma2=1.0, initial_law=PointMass(0.0))
    vals = simulate_trees(params, 5, 10_000, derive_rng(6, "centered"))
    size = subtree_size(4)
    x, y = vals[:, :size], vals[:, 1 : 2 * size : 2]
    incs = (y - 0.5 * x - 1.0).ravel()
    se = incs.std(ddof=1) / np.sqrt(len(incs))
    assert abs(incs.mean()) < 3 * se


def test_martingale_path_validation():
    with pytest.raises(ValueError):
        MartingalePath(increments=np.array([1.0]),
                       partial_sums=np.array([0.0, 1.0]),
                       bracket=np.array([0.5, 1.0]))  # bracket must start at 0
