import itertools
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragpes import sampling as S


def best_two_partition(x):
    """Exhaustive search over all 2-partitions of a small 1-D set."""
    x = np.asarray(x, float)
    best = None
    for mask in itertools.product([0, 1], repeat=len(x)):
        mask = np.array(mask, bool)
        if mask.all() or not mask.any():
            continue
        a, b = x[mask], x[~mask]
        cost = ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()
        if best is None or cost < best[0]:
            best = (cost, sorted([a.mean(), b.mean()]))
    return best


def test_one_cluster_is_the_mean():
    m = S.minibatch_kmeans([0.0, 2.0], 1, seed=3)
    assert m.centroids[0, 0] == pytest.approx(1.0)
    assert m.avg_inertia == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(8))
def test_two_clusters_match_exhaustive_oracle(seed):
    data = [0.0, 0.1, 10.0, 10.1]
    cost, centers = best_two_partition(data)
    assert centers == pytest.approx([0.05, 10.05])
    m = S.minibatch_kmeans(data, 2, batch_size=2, seed=seed)
    assert sorted(m.centroids[:, 0]) == pytest.approx(centers)
    assert S.kmeans_cost(data, m.centroids, m.assignments) == pytest.approx(cost)


def test_k_equals_n_gives_zero_inertia(rng):
    x = rng.normal(size=(12, 3))
    m = S.minibatch_kmeans(x, 12, seed=1)
    assert m.avg_inertia == pytest.approx(0.0, abs=1e-24)
    assert sorted(map(tuple, m.centroids)) == sorted(map(tuple, x))


def test_kmeans_errors():
    with pytest.raises(S.ClusteringError):
        S.minibatch_kmeans(np.zeros((0, 2)), 1)
    with pytest.raises(S.ClusteringError):
        S.minibatch_kmeans([1.0, 2.0], 3)


def test_assignments_are_nearest_and_deterministic(rng):
    x = rng.normal(size=(300, 4))
    a = S.minibatch_kmeans(x, 17, batch_size=50, seed=9)
    b = S.minibatch_kmeans(x, 17, batch_size=50, seed=9)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    d = ((x[:, None, :] - a.centroids[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(a.assignments, d.argmin(1))
    assert np.bincount(a.assignments, minlength=a.k).min() > 0


def test_stored_inertia_matches_definition(rng):
    x = rng.normal(size=(200, 3))
    m = S.minibatch_kmeans(x, 9, seed=2)
    direct = sum(np.sum((x[m.assignments == j] - m.centroids[j]) ** 2) for j in range(m.k)) / len(x)
    assert m.avg_inertia == pytest.approx(direct, rel=1e-12)
    assert S.average_inertia(m, x) == pytest.approx(direct, rel=1e-12)


def test_lloyd_steps_never_increase_inertia(rng):
    x = np.vstack([rng.normal(c, 0.5, size=(40, 2)) for c in ([0, 0], [3, 1], [-2, 4])])
    m = S.minibatch_kmeans(x, 5, batch_size=8, max_iter=3, n_refine=0, seed=4)
    prev = m.total_inertia
    for _ in range(15):
        m = S.lloyd_step(x, m)
        assert m.total_inertia <= prev + 1e-12
        prev = m.total_inertia


def test_average_inertia_hand_example():
    data = np.array([0.0, 2.0, 10.0])
    m = S.ClusterModel(2, np.array([[1.0], [10.0]]), np.array([0, 0, 1]), np.zeros(2), 0.0, 0.0)
    assert S.average_inertia(m, data) == pytest.approx(2 / 3)
    same = S.minibatch_kmeans(np.ones(5), 1)
    assert same.avg_inertia == 0.0


def test_select_training_points():
    assert S.select_training_points([0.0, 2.0], [[1.0]]).tolist() == [0]
    assert S.select_training_points([0.0, 1.0, 5.0, 7.0], [[5.0], [0.0]]).tolist() == [0, 2]
    x = np.random.default_rng(0).normal(size=(100, 2))
    m = S.minibatch_kmeans(x, S.sample_count(100, 0.1), seed=0)
    picked = S.select_training_points(x, m.centroids)
    assert len(picked) <= 10
    assert set(picked) <= set(range(100))


def test_slice_floor_rule():
    prim = S.ClusterModel(1, np.zeros((1, 1)), np.zeros(1, int), np.zeros(1), 0.0, 1.0)
    part = S.assign_slices([[0.5], [1.5], [2.3], [0.0], [1.0], [-1.2]], prim)
    assert part.slice_of.tolist() == [1, 2, 3, 1, 2, 2]
    assert part.slice_width == 1.0


def test_slice_width_zero_rejected():
    prim = S.minibatch_kmeans(np.ones((4, 2)), 1)
    with pytest.raises(S.ClusteringError):
        S.assign_slices(np.ones((2, 2)), prim)


def test_child_count_convention():
    assert S.child_cluster_count(5.0, 1.0) == 5
    assert S.child_cluster_count(2.1, 1.0) == 3
    assert S.child_cluster_count(1.5, 1.0) == 2
    assert S.initial_slice_k(10) == 3 and S.initial_slice_k(1) == 1


def test_recursion_stops_when_round_one_is_tight(rng):
    centers = np.array([[0, 0], [5, 5], [10, 0], [0, 10]], float)
    x = np.vstack([c + rng.uniform(-0.05, 0.05, size=(4, 2)) for c in centers])
    res = S.recursive_slice_clustering(x, eta0=0.01, seed=0)
    assert res.rounds == 1
    assert np.all(res.final_inertia <= 0.02)


def test_single_point_slice():
    res = S.recursive_slice_clustering([[1.0, 2.0]], eta0=0.5)
    assert len(res.final_centroids) == 1 and res.training_indices.tolist() == [0]
    assert res.final_inertia.tolist() == [0.0]


def test_single_wide_cluster_in_round_one_splits():
    res = S.recursive_slice_clustering([[0.0], [2.0]], eta0=0.2)
    assert res.rounds == 2
    assert sorted(res.centroids[1].ravel()) == [0.0, 2.0]


def test_oversized_cluster_split_into_ratio_children():
    wide = np.linspace(-1, 1, 5)
    eta = float(np.mean((wide - wide.mean()) ** 2))
    x = np.concatenate([[-100, -100.01], wide, [100, 100.01]])[:, None]
    res = S.recursive_slice_clustering(x, eta0=eta / 5, seed=0)
    assert len(res.centroids[0]) == 3
    assert res.inertia[0].max() == pytest.approx(eta)
    assert res.rounds == 2
    assert sorted(res.centroids[1].ravel()) == pytest.approx(sorted(wide))
    assert np.all(res.final_inertia <= 2 * eta / 5)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 200), dim=st.integers(1, 5))
def test_recursive_postcondition(seed, n, dim):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim)) * rng.uniform(0.5, 3, size=dim)
    eta0 = float(rng.uniform(0.01, 0.5))
    res = S.recursive_slice_clustering(x, eta0, seed=seed % 1000)
    assert np.all(res.final_inertia <= 2 * eta0)
    assert res.final_sizes.sum() == n
    assert set(res.training_indices) <= set(range(n))
