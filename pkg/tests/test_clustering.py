import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import blockgreedy as bg
from blockgreedy.clustering import balanced_sizes, contiguous_partition
from synth import planted_groups, random_sparse


def reference_clustering(a, B):
    """Dense, loop-based rendition of the seeded greedy clustering."""
    p = a.shape[1]
    sizes = balanced_sizes(p, B)
    nnz = np.count_nonzero(a, axis=0)
    left = list(range(p))
    blocks = []
    for b in range(B - 1):
        s = max(left, key=lambda j: (nnz[j], -j))
        score = {j: (np.inf if j == s else abs(a[:, s] @ a[:, j])) for j in left}
        chosen = sorted(left, key=lambda j: (-score[j], j))[: sizes[b]]
        blocks.append(sorted(chosen))
        left = [j for j in left if j not in chosen]
    blocks.append(left)
    return blocks


def test_balanced_sizes():
    assert balanced_sizes(10, 6).tolist() == [2, 2, 2, 2, 1, 1]
    assert balanced_sizes(9, 3).tolist() == [3, 3, 3]
    with pytest.raises(bg.UsageError):
        balanced_sizes(3, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.integers(0, 2**32 - 1), st.data())
def test_clustering_matches_reference(p, seed, data):
    B = data.draw(st.integers(1, p))
    rng = np.random.default_rng(seed)
    # small integers make exact ties common
    a = rng.integers(-2, 3, size=(6, p)) * (rng.random((6, p)) < 0.5)
    a[rng.integers(0, 6, size=p), np.arange(p)] = 1
    m = bg.SparseColMatrix.from_dense(a.astype(float))
    part = bg.cluster_features(m, B)
    assert [blk.tolist() for blk in part.blocks] == reference_clustering(a.astype(float), B)
    assert part.sizes().tolist() == balanced_sizes(p, B).tolist()


def test_threaded_clustering_identical(rng):
    X = random_sparse(rng, 100, 300, 0.05)
    assert bg.cluster_features(X, 12, threads=1) == bg.cluster_features(X, 12, threads=4)


def test_planted_groups_recovered(rng):
    X, groups = planted_groups(rng, 5, 4)
    part = bg.cluster_features(X, 5)
    assert part.same_grouping(bg.Partition.from_blocks(groups, X.n_cols))


def test_partition_round_trip(tmp_path, rng):
    part = bg.random_partition(rng, 17, 5)
    path = tmp_path / "part.txt"
    part.save(path)
    assert bg.Partition.load(path) == part
    assert path.read_text().splitlines()[0] == "# blocks=5 features=17"


def test_partition_validation():
    with pytest.raises(bg.UsageError):
        bg.Partition(np.array([0, 2]), 2)
    with pytest.raises(bg.UsageError):
        bg.Partition.from_blocks([[0, 1], [1]], 2)


def test_same_grouping_ignores_labels():
    a = bg.Partition(np.array([0, 0, 1]), 2)
    b = bg.Partition(np.array([1, 1, 0]), 2)
    assert a != b and a.same_grouping(b)


def test_partition_stats():
    a = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    m = bg.SparseColMatrix.from_dense(a)
    stats = bg.partition_stats(m, bg.Partition(np.array([0, 0, 1]), 2), w=np.array([0.0, 0.0, 2.0]))
    assert stats.block_sizes.tolist() == [2, 1]
    assert stats.block_nnz.tolist() == [3, 1]
    assert stats.active_blocks == 1
    assert stats.load_balance == pytest.approx(3 / 2)


def test_max_cross_block_dot_exact_vs_dense(rng):
    X = random_sparse(rng, 30, 12, 0.3)
    part = bg.random_partition(rng, 12, 3)
    G = np.abs(X.to_dense().T @ X.to_dense())
    cross = part.assignment[:, None] != part.assignment[None, :]
    res = bg.max_cross_block_dot(X, part)
    assert res.exact
    assert res.value == pytest.approx(G[cross].max(), abs=1e-14)


def test_max_cross_block_dot_sampled_is_lower_bound(rng):
    X = random_sparse(rng, 30, 40, 0.3)
    part = contiguous_partition(40, 8)
    exact = bg.max_cross_block_dot(X, part).value
    est = bg.max_cross_block_dot(X, part, exact_limit=10, num_samples=200, rng=rng)
    assert not est.exact and est.value <= exact + 1e-15


def test_unnormalized_warning():
    m = bg.SparseColMatrix.from_dense(np.array([[2.0, 1.0], [0.0, 1.0]]))
    with pytest.warns(UserWarning):
        bg.max_cross_block_dot(m, contiguous_partition(2, 2))
