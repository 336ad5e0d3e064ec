import numpy as np
import pytest

from mc3.clustering import agglomerative_cluster, canonical_labels
from mc3.common import TooFewPoints
from mc3.numerics import make_rng


def brute_force_average_linkage(points: np.ndarray, n_clusters: int) -> np.ndarray:
    """Repeatedly merges the two clusters with the smallest mean pairwise cosine distance."""
    units = points / np.linalg.norm(points, axis=1, keepdims=True)
    distance = 1.0 - units @ units.T
    clusters = [[i] for i in range(len(points))]
    while len(clusters) > n_clusters:
        membership = np.zeros((len(clusters), len(points)))
        for c, members in enumerate(clusters):
            membership[c, members] = 1.0
        sizes = membership.sum(axis=1)
        mean_distance = membership @ distance @ membership.T / np.outer(sizes, sizes)
        np.fill_diagonal(mean_distance, np.inf)
        a, b = sorted(int(i) for i in np.unravel_index(np.argmin(mean_distance), mean_distance.shape))
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    labels = np.empty(len(points), dtype=np.int64)
    for c, members in enumerate(clusters):
        labels[members] = c
    return canonical_labels(labels)


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force(seed):
    rng = make_rng(seed)
    n = int(rng.integers(20, 61))
    n_clusters = int(rng.integers(2, 11))
    points = rng.standard_normal((n, int(rng.integers(3, 9))))
    result = agglomerative_cluster(points, n_clusters=n_clusters)
    assert np.array_equal(result.labels, brute_force_average_linkage(points, n_clusters))


def test_one_cluster_per_point():
    points = make_rng(0).standard_normal((6, 3))
    result = agglomerative_cluster(points, n_clusters=6, n_exemplars=3)
    assert result.labels.tolist() == list(range(6))
    assert result.exemplars == [[i] for i in range(6)]


def test_single_point():
    result = agglomerative_cluster(np.ones((1, 3)), n_clusters=1)
    assert result.labels.tolist() == [0]
    assert result.exemplars == [[0]]


def test_separates_antipodal_blobs():
    rng = make_rng(1)
    direction = np.array([1.0, 0.0, 0.0])
    points = np.concatenate(
        [direction + 0.05 * rng.standard_normal((10, 3)), -direction + 0.05 * rng.standard_normal((10, 3))]
    )
    result = agglomerative_cluster(points, n_clusters=2)
    assert result.labels.tolist() == [0] * 10 + [1] * 10
    assert result.sizes == [10, 10]


def test_permutation_gives_same_partition():
    rng = make_rng(2)
    points = rng.standard_normal((25, 4))
    order = rng.permutation(25)
    original = agglomerative_cluster(points, n_clusters=4).labels
    permuted = agglomerative_cluster(points[order], n_clusters=4).labels
    assert np.array_equal(canonical_labels(original[order]), permuted)


def test_exemplars_are_cluster_members_nearest_the_centre():
    points = np.array([[1.0, 0.0], [1.0, 0.1], [1.0, -0.1], [1.0, 0.5]])
    result = agglomerative_cluster(points, n_clusters=1, n_exemplars=2)
    assert result.exemplars == [[1, 0]]


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        agglomerative_cluster(np.eye(3), n_clusters=4)


def test_invalid_cluster_count():
    with pytest.raises(ValueError):
        agglomerative_cluster(np.eye(3), n_clusters=0)


def test_canonical_labels():
    assert canonical_labels([7, 7, 2, 9, 2]).tolist() == [0, 0, 1, 2, 1]
