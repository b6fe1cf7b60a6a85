import logging
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..core.pointcloud import ArrayLike, as_points

logger = logging.getLogger(__name__)

CANDIDATE_FACES = 8 # Nearest face centroids used for the initial distance bound
PAIR_CHUNK = 4096


class TriangleMesh:
    """
    Vertices (V, 3) and triangle faces (F, 3). Zero-area faces are dropped on construction.
    """

    def __init__(self, vertices, faces) -> None:
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError(f"Face indices must lie in [0, {len(vertices) - 1}]")
        if not np.all(np.isfinite(vertices)):
            raise ValueError("Mesh vertices must be finite")

        corners = vertices[faces]
        areas = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
        keep = areas > 0.0
        if not np.all(keep):
            logger.warning(f"Dropped {int(np.count_nonzero(~keep))} degenerate faces")
        vertices.setflags(write=False)
        faces = faces[keep]
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces
        self.areas = areas[keep]

    def __len__(self) -> int:
        return self.faces.shape[0]

    def __repr__(self) -> str:
        return f"TriangleMesh(vertices={len(self.vertices)}, faces={len(self)})"

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def sample_surface(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Area-uniform samples on the surface."""
        if len(self) == 0:
            raise ValueError("empty mesh")
        chosen = rng.choice(len(self), size=count, p=self.areas / self.areas.sum())
        u, v = rng.random(count), rng.random(count)
        flip = u + v > 1.0
        u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
        tri = self.triangles[chosen]
        return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def closest_points_on_triangles(triangles: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """
    Closest point on each triangle (n, 3, 3) to the matching query (n, 3),
    resolved through the vertex, edge and face regions of the triangle.
    """
    a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    ab, ac = b - a, c - a
    ap, bp, cp = queries - a, queries - b, queries - c

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        on_ab = a + (d1 / (d1 - d3))[:, None] * ab
        on_ac = a + (d2 / (d2 - d6))[:, None] * ac
        d43 = d4 - d3
        on_bc = b + (d43 / (d43 + (d5 - d6)))[:, None] * (c - b)
        denom = 1.0 / (va + vb + vc)
        inside = a + (vb * denom)[:, None] * ab + (vc * denom)[:, None] * ac

    regions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & (d43 >= 0) & (d5 - d6 >= 0),
    ]
    choices = [a, b, on_ab, c, on_ac, on_bc]
    # First matching region wins, the face interior is the fallback
    closest = inside
    for region, choice in zip(reversed(regions), reversed(choices)):
        closest = np.where(region[:, None], choice, closest)
    return closest


def _pair_distances(triangles: np.ndarray, points: np.ndarray, point_ids: np.ndarray, face_ids: np.ndarray) -> np.ndarray:
    distances = np.empty(point_ids.size)
    for start in range(0, point_ids.size, PAIR_CHUNK):
        stop = start + PAIR_CHUNK
        query = points[point_ids[start:stop]]
        closest = closest_points_on_triangles(triangles[face_ids[start:stop]], query)
        distances[start:stop] = np.linalg.norm(query - closest, axis=1)
    return distances


def point_distances(points: ArrayLike, mesh: TriangleMesh) -> np.ndarray:
    """Exact distance from every point to the closest face of the mesh."""
    if len(mesh) == 0:
        raise ValueError("empty mesh")
    points = as_points(points)
    triangles = mesh.triangles
    centroids = triangles.mean(axis=1)
    reach = float(np.max(np.linalg.norm(triangles - centroids[:, None, :], axis=2)))
    tree = cKDTree(centroids)

    # Upper bound from the faces with the nearest centroids
    k = min(CANDIDATE_FACES, len(mesh))
    _, near = tree.query(points, k=k)
    near = np.asarray(near, dtype=np.int64).reshape(len(points), k)
    bound = _pair_distances(
        triangles, points, np.repeat(np.arange(len(points)), k), near.reshape(-1)
    ).reshape(len(points), k).min(axis=1)

    # Any closer face has its centroid within bound + reach
    candidates = tree.query_ball_point(points, bound + reach + 1e-12)
    lengths = np.array([len(found) for found in candidates], dtype=np.int64)
    point_ids = np.repeat(np.arange(len(points)), lengths)
    face_ids = np.concatenate([np.asarray(found, dtype=np.int64) for found in candidates])
    distances = _pair_distances(triangles, points, point_ids, face_ids)

    best = np.full(len(points), np.inf)
    np.minimum.at(best, point_ids, distances)
    return np.minimum(best, bound)


def point_to_mesh(points: ArrayLike, mesh: TriangleMesh, bidirectional: bool = False) -> Tuple[float, float]:
    """P2F (mean, max) from the points to the mesh; with `bidirectional` the mesh vertices are measured back to the points too."""
    distances = point_distances(points, mesh)
    if bidirectional:
        back, _ = cKDTree(as_points(points)).query(mesh.vertices[np.unique(mesh.faces)], k=1)
        distances = np.concatenate([distances, np.asarray(back)])
    return float(distances.mean()), float(distances.max())
