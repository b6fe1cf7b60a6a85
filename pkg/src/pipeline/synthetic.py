import logging
from typing import Tuple

import numpy as np
from scipy.spatial import ConvexHull

from ..config import STREAM_SYNTHETIC, make_rng
from ..core.pointcloud import PointCloud
from ..metrics.mesh import TriangleMesh

logger = logging.getLogger(__name__)

SHAPES = ("sphere", "torus", "plane-with-crease")

SPHERE_RADIUS = 1.0
SPHERE_MESH_POINTS = 4096 # Extra hull vertices so the sphere mesh stays close to the true surface
TORUS_MAJOR = 1.0
TORUS_MINOR = 0.35
TORUS_SEGMENTS = (96, 48)
CREASE_HEIGHT = 0.5


def fibonacci_sphere(count: int, radius: float = SPHERE_RADIUS) -> np.ndarray:
    index = np.arange(count) + 0.5
    z = 1.0 - 2.0 * index / count
    ring = np.sqrt(1.0 - z * z)
    angle = np.pi * (1.0 + np.sqrt(5.0)) * index
    return radius * np.column_stack([ring * np.cos(angle), ring * np.sin(angle), z])


def _sphere(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, TriangleMesh]:
    directions = rng.standard_normal((n, 3))
    points = SPHERE_RADIUS * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    # Samples are hull vertices, so they lie exactly on the mesh
    vertices = np.vstack([points, fibonacci_sphere(SPHERE_MESH_POINTS)])
    hull = ConvexHull(vertices)
    return points, TriangleMesh(vertices, hull.simplices)


def torus_mesh(segments=TORUS_SEGMENTS) -> TriangleMesh:
    around, tube = segments
    u = 2.0 * np.pi * np.arange(around) / around
    v = 2.0 * np.pi * np.arange(tube) / tube
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = TORUS_MAJOR + TORUS_MINOR * np.cos(vv)
    vertices = np.stack([ring * np.cos(uu), ring * np.sin(uu), TORUS_MINOR * np.sin(vv)], axis=-1).reshape(-1, 3)

    i, j = np.meshgrid(np.arange(around), np.arange(tube), indexing="ij")
    a = i * tube + j
    b = ((i + 1) % around) * tube + j
    c = ((i + 1) % around) * tube + (j + 1) % tube
    d = i * tube + (j + 1) % tube
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(vertices, faces)


def crease_mesh() -> TriangleMesh:
    vertices = np.array([
        [-1.0, -1.0, 0.0], [-1.0, 1.0, 0.0],
        [0.0, -1.0, CREASE_HEIGHT], [0.0, 1.0, CREASE_HEIGHT],
        [1.0, -1.0, 0.0], [1.0, 1.0, 0.0],
    ])
    faces = np.array([[0, 2, 3], [0, 3, 1], [2, 4, 5], [2, 5, 3]])
    return TriangleMesh(vertices, faces)


def generate_synthetic(shape: str, n: int, seed: int = 0, noise: float = 0.0) -> Tuple[PointCloud, TriangleMesh]:
    """
    n area-uniform samples of a synthetic surface plus its mesh.
    `noise` is the standard deviation of Gaussian jitter added to the samples, in shape units.
    """
    if shape not in SHAPES:
        raise ValueError(f"Unknown shape '{shape}', expected one of {SHAPES}")
    if n < 4:
        raise ValueError(f"n must be >= 4, got {n}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = make_rng(seed, STREAM_SYNTHETIC)

    if shape == "sphere":
        points, mesh = _sphere(n, rng)
    else:
        mesh = torus_mesh() if shape == "torus" else crease_mesh()
        points = mesh.sample_surface(n, rng)

    if noise > 0:
        points = points + rng.normal(0.0, noise, size=points.shape)
    logger.info(f"Generated {n} points on a {shape} (seed {seed}, noise {noise})")
    return PointCloud(points), mesh


def bounding_sphere_radius(cloud) -> float:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    return float(np.max(np.linalg.norm(points - points.mean(axis=0), axis=1)))
