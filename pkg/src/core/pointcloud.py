import heapq
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

ArrayLike = Union["PointCloud", np.ndarray, Sequence[Sequence[float]]]


class PointCloud:
    """
    Ordered 3D points plus the (center, scale) that maps them back to source units:
    source = points * scale + center.
    Arrays are made read-only on construction so clouds can be shared across threads.
    """

    def __init__(self, points, center=None, scale: float = 1.0) -> None:
        array = np.array(points, dtype=np.float64)
        if array.ndim == 1 and array.size == 3:
            array = array.reshape(1, 3)
        if array.ndim != 2 or array.shape[1] != 3:
            raise ValueError(f"Points must have shape (N, 3), got {array.shape}")
        if array.shape[0] < 1:
            raise ValueError("A point cloud needs at least one point")
        if not np.all(np.isfinite(array)):
            raise ValueError("Point coordinates must be finite")
        if not scale > 0:
            raise ValueError(f"Normalization scale must be positive, got {scale}")
        array.setflags(write=False)
        self.points = array
        center_array = np.zeros(3) if center is None else np.array(center, dtype=np.float64).reshape(3)
        center_array.setflags(write=False)
        self.center = center_array
        self.scale = float(scale)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)}, center={self.center.tolist()}, scale={self.scale})"

    @property
    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    @property
    def diagonal(self) -> float:
        low, high = self.bounding_box
        return float(np.linalg.norm(high - low))

    def is_normalized(self, tolerance: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.points) <= 0.5 + tolerance))

    def with_points(self, points) -> "PointCloud":
        # New points that share this cloud's frame
        return PointCloud(points, self.center, self.scale)


def as_points(cloud: ArrayLike) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    array = np.asarray(cloud, dtype=np.float64)
    if array.ndim == 1 and array.size == 3:
        array = array.reshape(1, 3)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ValueError(f"Points must have shape (N, 3), got {array.shape}")
    return array


def normalize(cloud: PointCloud) -> PointCloud:
    low, high = cloud.bounding_box
    longest = float(np.max(high - low))
    if longest <= 0.0:
        raise ValueError("degenerate cloud")
    box_center = (low + high) / 2.0
    points = (cloud.points - box_center) / longest
    # Compose with any normalization the input already carries
    return PointCloud(points, center=cloud.center + box_center * cloud.scale, scale=cloud.scale * longest)


def denormalize(cloud: PointCloud) -> PointCloud:
    return PointCloud(cloud.points * cloud.scale + cloud.center)


class NeighborIndex:
    """
    Exact k-NN / radius queries over a cloud. Results are sorted by distance,
    equal distances by lowest point index.
    """

    def __init__(self, cloud: ArrayLike) -> None:
        self.points = as_points(cloud)
        if self.points.shape[0] < 1:
            raise ValueError("Cannot index an empty cloud")
        self.tree = cKDTree(self.points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, queries: ArrayLike, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Batched k-NN: (M, k) indices and (M, k) Euclidean distances."""
        n = len(self)
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        if k > n:
            raise ValueError(f"k={k} exceeds the number of indexed points ({n})")
        queries = as_points(queries)

        probe = min(k + 1, n)
        _, candidates = self.tree.query(queries, k=probe)
        candidates = np.asarray(candidates, dtype=np.int64).reshape(len(queries), probe)
        squared = np.sum((self.points[candidates] - queries[:, None, :]) ** 2, axis=2)

        order = _row_lexsort(squared, candidates)
        candidates = np.take_along_axis(candidates, order, axis=1)
        squared = np.take_along_axis(squared, order, axis=1)

        indices = candidates[:, :k].copy()
        distances = squared[:, :k].copy()
        if probe > k:
            # A tie at the k-th place may hide a lower index outside the probe
            tied = np.nonzero(squared[:, k] <= squared[:, k - 1])[0]
            for row in tied:
                indices[row], distances[row] = self._exact_row(queries[row], k, squared[row, k - 1])
        return indices, np.sqrt(distances)

    def _exact_row(self, query: np.ndarray, k: int, radius_sq: float) -> Tuple[np.ndarray, np.ndarray]:
        radius = np.sqrt(radius_sq)
        found = np.asarray(self.tree.query_ball_point(query, radius * (1.0 + 1e-9) + 1e-12), dtype=np.int64)
        squared = np.sum((self.points[found] - query) ** 2, axis=1)
        order = np.lexsort((found, squared))[:k]
        return found[order], squared[order]

    def radius(self, query: ArrayLike, radius: float) -> np.ndarray:
        point = as_points(query)[0]
        found = np.asarray(self.tree.query_ball_point(point, radius), dtype=np.int64)
        squared = np.sum((self.points[found] - point) ** 2, axis=1)
        return found[np.lexsort((found, squared))]

    def nearest_distances(self, queries: ArrayLike) -> np.ndarray:
        distances, _ = self.tree.query(as_points(queries), k=1)
        return np.asarray(distances, dtype=np.float64)


def _row_lexsort(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    # Per-row ordering by primary, then secondary
    order = np.argsort(secondary, axis=1, kind="stable")
    primary_sorted = np.take_along_axis(primary, order, axis=1)
    second = np.argsort(primary_sorted, axis=1, kind="stable")
    return np.take_along_axis(order, second, axis=1)


def knn(index: NeighborIndex, query, k: int) -> List[Tuple[int, float]]:
    indices, distances = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(d)) for i, d in zip(indices[0], distances[0])]


def _farthest_by_distance(points: np.ndarray, m: int, start: int) -> np.ndarray:
    # Lazy max-heap on nearest squared distance; a pick only lowers distances inside its current reach
    n = points.shape[0]
    tree = cKDTree(points)
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    nearest_sq = np.sum((points - points[start]) ** 2, axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[start] = True
    heap = [(-value, index) for index, value in enumerate(nearest_sq.tolist()) if index != start]
    heapq.heapify(heap)
    for step in range(1, m):
        while True:
            negative, chosen = heapq.heappop(heap)
            if not taken[chosen] and -negative == nearest_sq[chosen]:
                break
        selected[step] = chosen
        taken[chosen] = True
        reach = np.sqrt(nearest_sq[chosen]) * (1.0 + 1e-9) + 1e-12
        found = np.asarray(tree.query_ball_point(points[chosen], reach), dtype=np.int64)
        squared = np.sum((points[found] - points[chosen]) ** 2, axis=1)
        closer = squared < nearest_sq[found]
        found, squared = found[closer], squared[closer]
        nearest_sq[found] = squared
        for index, value in zip(found.tolist(), squared.tolist()):
            if not taken[index]:
                heapq.heappush(heap, (-value, index))
    return selected


def farthest_point_order(
    points: np.ndarray,
    m: int,
    start: int,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Greedy farthest point selection. With weights the score of a candidate is
    weight * distance-to-set, otherwise the squared distance. Ties go to the lowest index.
    """
    if weights is None:
        return _farthest_by_distance(points, m, start)
    n = points.shape[0]
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    nearest_sq = np.sum((points - points[start]) ** 2, axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[start] = True
    for step in range(1, m):
        score = weights * np.sqrt(nearest_sq)
        score[taken] = -1.0
        chosen = int(np.argmax(score))
        selected[step] = chosen
        taken[chosen] = True
        nearest_sq = np.minimum(nearest_sq, np.sum((points - points[chosen]) ** 2, axis=1))
    return selected


def fps(cloud: ArrayLike, m: int) -> np.ndarray:
    points = as_points(cloud)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    centroid = points.mean(axis=0)
    start = int(np.argmin(np.sum((points - centroid) ** 2, axis=1)))
    return farthest_point_order(points, m, start)
