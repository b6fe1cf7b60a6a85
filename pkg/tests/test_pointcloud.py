"""Point clouds, normalization, k-NN and farthest point sampling."""
import numpy as np
import pytest

from src.core.pointcloud import NeighborIndex, PointCloud, denormalize, farthest_point_order, fps, knn, normalize

LINE = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])


def test_normalize_two_points():
    cloud = normalize(PointCloud([[0, 0, 0], [2, 0, 0]]))
    assert np.allclose(cloud.center, [1, 0, 0])
    assert cloud.scale == 2.0
    assert np.allclose(cloud.points, [[-0.5, 0, 0], [0.5, 0, 0]])


def test_normalize_already_normalized_is_identity():
    points = np.array([[-0.5, -0.25, 0.1], [0.5, 0.25, -0.1], [-0.1, 0.1, 0.0]])
    cloud = normalize(PointCloud(points))
    assert np.array_equal(cloud.points, points)
    assert cloud.scale == 1.0


def test_normalize_scaled_cube():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    cloud = normalize(PointCloud(corners * 7 + [3, -2, 5]))
    assert np.allclose(cloud.points, corners - 0.5)


def test_normalize_degenerate_cloud():
    with pytest.raises(ValueError, match="degenerate cloud"):
        normalize(PointCloud([[1, 2, 3], [1, 2, 3]]))


def test_denormalize_restores_source(rng):
    points = rng.normal(size=(200, 3)) * [3, 1, 0.2] + [10, -4, 2]
    restored = denormalize(normalize(PointCloud(points)))
    assert np.allclose(restored.points, points, atol=1e-12)
    assert normalize(PointCloud(points)).is_normalized()


def test_knn_examples():
    index = NeighborIndex(LINE)
    assert [i for i, _ in knn(index, [0.9, 0, 0], 2)] == [1, 0]
    nearest = knn(index, [2, 0, 0], 1)
    assert nearest == [(2, 0.0)]
    with pytest.raises(ValueError):
        knn(index, [0, 0, 0], 5)


def test_knn_ties_go_to_lowest_index():
    index = NeighborIndex([[1, 0, 0], [-1, 0, 0], [0, 1, 0]])
    indices, distances = index.query([[0, 0, 0]], 2)
    assert indices[0].tolist() == [0, 1]
    assert np.allclose(distances, 1.0)


def test_knn_matches_brute_force(rng):
    points = rng.random((500, 3))
    queries = rng.random((50, 3))
    indices, distances = NeighborIndex(points).query(queries, 10)
    brute = np.linalg.norm(queries[:, None, :] - points[None, :, :], axis=2)
    expected = np.argsort(brute, axis=1)[:, :10]
    assert np.array_equal(indices, expected)
    assert np.allclose(distances, np.take_along_axis(brute, expected, axis=1))


def test_fps_collinear():
    assert fps(LINE, 2).tolist() == [1, 3]


def test_fps_full_permutation_and_bounds(rng):
    points = rng.random((64, 3))
    order = fps(points, 64)
    assert sorted(order.tolist()) == list(range(64))
    with pytest.raises(ValueError):
        fps(points, 0)
    with pytest.raises(ValueError):
        fps(points, 65)


def test_fps_spacing_never_increases(rng):
    points = rng.random((300, 3))
    order = fps(points, 40)

    def min_spacing(m):
        chosen = points[order[:m]]
        gaps = np.linalg.norm(chosen[:, None] - chosen[None], axis=2)
        return gaps[np.triu_indices(m, 1)].min()

    spacings = [min_spacing(m) for m in range(2, 41)]
    assert all(b <= a + 1e-12 for a, b in zip(spacings, spacings[1:]))


def test_fps_same_points_after_shuffling(rng):
    points = rng.random((500, 3))
    chosen = points[fps(points, 60)]
    for _ in range(5):
        shuffled = points[rng.permutation(500)]
        again = shuffled[fps(shuffled, 60)]
        assert np.array_equal(chosen[np.lexsort(chosen.T)], again[np.lexsort(again.T)])


def argmax_order(points, m, start):
    selected = [start]
    nearest_sq = np.sum((points - points[start]) ** 2, axis=1)
    taken = np.zeros(len(points), dtype=bool)
    taken[start] = True
    for _ in range(1, m):
        score = nearest_sq.copy()
        score[taken] = -1.0
        chosen = int(np.argmax(score))
        selected.append(chosen)
        taken[chosen] = True
        nearest_sq = np.minimum(nearest_sq, np.sum((points - points[chosen]) ** 2, axis=1))
    return selected


@pytest.mark.parametrize("layout", ["random", "lattice", "duplicates"])
def test_farthest_point_order_matches_argmax_loop(rng, layout):
    if layout == "random":
        points = rng.random((400, 3))
    elif layout == "lattice":
        axis = np.arange(6, dtype=np.float64)
        points = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    else:
        points = np.repeat(rng.random((50, 3)), 3, axis=0)
    m = len(points) if layout == "duplicates" else 120
    assert farthest_point_order(points, m, 7).tolist() == argmax_order(points, m, 7)
