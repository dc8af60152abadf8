"""Tree population simulation: determinism, shapes, marginal laws."""

import math

import numpy as np
import pytest
from scipy import stats

from bmcsim.kernels import BarParams, FiniteKernel, GaussianLaw, PointMass
from bmcsim.simulate import (
    DepthLimitError,
    IncompleteTreeError,
    derive_rng,
    population_from_csv,
    simulate_tagged_chain,
    simulate_tree,
    simulate_trees,
)


def two_state_kernel(t00=0.65, t11=0.65):
    # Conditionally independent daughters sharing one transition row.
    t = np.array([[t00, 1 - t00], [1 - t11, t11]])
    p = np.einsum("xy,xz->xyz", t, t)
    return FiniteKernel(p=p, nu=np.array([0.5, 0.5]))


def test_tree_has_full_node_count():
    params = BarParams(0.5, 1.0, 0.3, 1.5)
    pop = simulate_tree(params, 3, derive_rng(0, "count"))
    assert len(pop) == 15


def test_noise_free_tree_is_affine_recursion():
    params = BarParams(0.5, 1.0, -0.25, 2.0, sigma2=0.0,
                       initial_law=PointMass(1.0))
    pop = simulate_tree(params, 4, derive_rng(0, "det"))
    for i in range(1, 16):
        x = pop.value(i)
        assert pop.value(2 * i) == pytest.approx(0.5 * x + 1.0, abs=0)
        assert pop.value(2 * i + 1) == pytest.approx(-0.25 * x + 2.0, abs=0)


def test_same_seed_reproduces_bit_identical_population():
    params = BarParams(0.5, 1.0, 0.3, 1.5, rho=0.2,
                       initial_law=GaussianLaw(0.0, 1.0))
    a = simulate_tree(params, 8, derive_rng(123, "exp", 0))
    b = simulate_tree(params, 8, derive_rng(123, "exp", 0))
    assert np.array_equal(a.values, b.values)


def test_different_seeds_differ_somewhere():
    params = BarParams(0.5, 1.0, 0.3, 1.5)
    a = simulate_tree(params, 8, derive_rng(1))
    b = simulate_tree(params, 8, derive_rng(2))
    assert not np.array_equal(a.values, b.values)


def test_depth_guard():
    params = BarParams(0.5, 1.0, 0.3, 1.5)
    with pytest.raises(DepthLimitError):
        simulate_tree(params, 25, derive_rng(0))


def test_finite_batch_rows_are_valid_states():
    k = two_state_kernel()
    vals = simulate_trees(k, 6, 64, derive_rng(5))
    assert vals.shape == (64, 127)
    assert vals.min() >= 0 and vals.max() <= 1


def test_same_generation_nodes_share_marginal_law():
    # Exchangeability of marginals within a generation: same-generation
    # nodes from independent replications pass a two-sample KS test.
    params = BarParams(0.6, 0.5, -0.4, 1.0, rho=0.3,
                       initial_law=GaussianLaw(0.0, 2.0))
    vals = simulate_trees(params, 3, 10_000, derive_rng(77, "ks"))
    stat = stats.ks_2samp(vals[:, 8 - 1], vals[:, 12 - 1]).statistic
    assert stat <= 0.05


def test_csv_roundtrip(tmp_path):
    params = BarParams(0.5, 1.0, 0.3, 1.5)
    pop = simulate_tree(params, 5, derive_rng(9, "csv"))
    path = tmp_path / "tree.csv"
    pop.to_csv(path)
    back = population_from_csv(path)
    assert back.depth == 5
    assert np.array_equal(back.values, pop.values)


def test_csv_rejects_missing_node(tmp_path):
    path = tmp_path / "broken.csv"
    rows = ["node,value"] + [f"{i},{float(i)}" for i in range(1, 8) if i != 7]
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(IncompleteTreeError) as err:
        population_from_csv(path)
    assert err.value.missing == [7]


def test_tagged_chain_single_step_and_length():
    params = BarParams(0.5, 1.0, 0.5, 1.0, sigma2=0.0,
                       initial_law=PointMass(2.0))
    path = simulate_tagged_chain(params, 1, derive_rng(0, "one"))
    assert path.shape == (2,)
    assert path[0] == 2.0 and path[1] == pytest.approx(2.0, abs=0)
    with pytest.raises(ValueError):
        simulate_tagged_chain(params, 0, derive_rng(0))


def test_tagged_chain_symmetric_bar_long_run_mean():
    # Symmetric slopes and intercepts: stationary mean b / (1 - a).
    params = BarParams(0.5, 1.0, 0.5, 1.0, sigma2=1.0,
                       initial_law=PointMass(0.0))
    path = simulate_tagged_chain(params, 100_000, derive_rng(11, "mean"))
    tail = path[1000:]
    # Batch-means standard error for the autocorrelated chain.
    blocks = tail[: len(tail) // 100 * 100].reshape(100, -1).mean(axis=1)
    se = blocks.std(ddof=1) / math.sqrt(len(blocks))
    assert abs(tail.mean() - 2.0) < 4 * se


def test_tagged_chain_uniform_finite_occupation():
    k = two_state_kernel(0.5, 0.5)  # uniform lineage kernel
    path = simulate_tagged_chain(k, 100_000, derive_rng(3, "occ"))
    freq = (path == 0).mean()
    assert abs(freq - 0.5) < 3 * 0.5 / math.sqrt(len(path))


def test_tagged_chain_matches_nonuniform_stationary_law():
    # Lineage kernel [[.9,.1],[.2,.8]] has stationary law (2/3, 1/3);
    # occupation frequencies agree within batch-means standard errors.
    k = two_state_kernel(0.9, 0.8)
    path = simulate_tagged_chain(k, 100_000, derive_rng(9, "occ2"))[1000:]
    ind = (path == 0).astype(float)
    blocks = ind[: len(ind) // 200 * 200].reshape(200, -1).mean(axis=1)
    se = blocks.std(ddof=1) / math.sqrt(len(blocks))
    assert abs(ind.mean() - 2.0 / 3.0) < 4 * se
