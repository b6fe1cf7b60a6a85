import logging
from typing import Optional, Tuple

import numpy as np
from scipy.stats import qmc

from ..config import JITTER_SCALE, REFINE_NEIGHBORS, RefineConfig
from ..core.pointcloud import ArrayLike, NeighborIndex, PointCloud, as_points
from ..pipeline.io import read_pointcloud
from ..sampling.grid_sampler import CellSampleSet
from ..voxel.voxelizer import VoxelGrid

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-12


def placement_params(samples: CellSampleSet) -> Tuple[np.ndarray, np.ndarray]:
    """
    2D parameters u in [0, 1)^2 for every output point, ordered by (cell, rank).
    Rank r of a cell takes Halton point r shifted by (0.5, 0.5) modulo 1, so the
    first point of every cell sits at the middle of the parameter square.
    """
    cells = samples.expanded()
    starts = np.repeat(np.cumsum(samples.counts) - samples.counts, samples.counts)
    ranks = np.arange(cells.size) - starts
    halton = qmc.Halton(d=2, scramble=False).random(int(samples.counts.max()))
    params = np.mod(halton[ranks] + 0.5, 1.0)
    return params, cells


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # Largest-magnitude component made positive, fits are then sign-stable
    pick = np.argmax(np.abs(vectors), axis=-1)
    signs = np.sign(np.take_along_axis(vectors, pick[..., None], axis=-1))
    signs[signs == 0] = 1.0
    return vectors * signs


def _fit_planes(neighborhoods: np.ndarray):
    """Least-squares planes through (M, k, 3) neighborhoods: centroids, in-plane bases, normals, rank flags."""
    centroids = neighborhoods.mean(axis=1)
    centered = neighborhoods - centroids[:, None, :]
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    full_rank = singular[:, 1] > RANK_TOLERANCE * np.maximum(singular[:, 0], RANK_TOLERANCE)
    basis = _canonical_signs(vt[:, :2, :])
    normals = _canonical_signs(np.cross(basis[:, 0], basis[:, 1]))
    return centroids, basis, normals, full_rank


def _map_to_plane(anchor: np.ndarray, basis: np.ndarray, params: np.ndarray, side: float) -> np.ndarray:
    offsets = (params[:, 0:1] - 0.5) * basis[:, 0] + (params[:, 1:2] - 0.5) * basis[:, 1]
    return anchor + offsets * side


def _clamp_to_cell(points: np.ndarray, centers: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    reach = grid.side / 2.0 + grid.diagonal / 2.0
    points = np.clip(points, centers - reach, centers + reach)
    offsets = points - centers
    distance = np.linalg.norm(offsets, axis=1)
    scale = np.where(distance > grid.diagonal, grid.diagonal / np.maximum(distance, 1e-300), 1.0)
    return centers + offsets * scale[:, None]


def place_coarse(
    samples: CellSampleSet,
    grid: VoxelGrid,
    input_cloud: ArrayLike,
    k_r: int = REFINE_NEIGHBORS,
) -> PointCloud:
    if len(samples) == 0:
        raise ValueError("No sampled cells to place points in")
    source = as_points(input_cloud)
    if source.shape[0] == 0:
        raise ValueError("Input cloud is empty")

    centers = grid.cell_centers(samples.cells)
    k = min(k_r, source.shape[0])
    if k >= 3:
        indices, _ = NeighborIndex(source).query(centers, k)
        centroids, basis, normals, full_rank = _fit_planes(source[indices])
    else:
        full_rank = np.zeros(len(samples), dtype=bool)
        centroids, basis, normals = centers, np.zeros((len(samples), 2, 3)), np.zeros((len(samples), 3))

    heights = np.sum((centers - centroids) * normals, axis=1)
    anchors = centers - heights[:, None] * normals

    params, _ = placement_params(samples)
    owner = np.repeat(np.arange(len(samples)), samples.counts)
    placed = _map_to_plane(anchors[owner], basis[owner], params, grid.side)

    degenerate = ~full_rank[owner]
    if np.any(degenerate):
        logger.debug(f"{int(np.count_nonzero(~full_rank))} cells have a degenerate neighborhood, using jittered centers")
        jitter = np.zeros((owner.size, 3))
        jitter[:, :2] = params - 0.5
        placed[degenerate] = centers[owner][degenerate] + jitter[degenerate] * (JITTER_SCALE * np.sqrt(2.0) / grid.resolution)

    placed = _clamp_to_cell(placed, centers[owner], grid)
    if isinstance(input_cloud, PointCloud):
        return input_cloud.with_points(placed)
    return PointCloud(placed)


def expand_cells(samples: CellSampleSet) -> np.ndarray:
    """Owning cell per output point, aligned with place_coarse."""
    return samples.expanded()


def _quadric_heights(local: np.ndarray, weights: np.ndarray, queries: np.ndarray) -> np.ndarray:
    # Weighted fit of h = a + bx + cy + dx^2 + exy + fy^2 per neighborhood, evaluated at the query
    x, y, h = local[..., 0], local[..., 1], local[..., 2]
    design = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1)
    root = np.sqrt(weights)[..., None]
    coefficients = np.linalg.pinv(design * root) @ (h * root[..., 0])[..., None]
    qx, qy = queries[:, 0], queries[:, 1]
    terms = np.stack([np.ones_like(qx), qx, qy, qx * qx, qx * qy, qy * qy], axis=-1)
    return np.sum(terms * coefficients[..., 0], axis=1)


def refine(
    coarse: ArrayLike,
    input_cloud: ArrayLike,
    config: Optional[RefineConfig] = None,
    grid: Optional[VoxelGrid] = None,
) -> PointCloud:
    config = config if config is not None else RefineConfig()
    points = as_points(coarse)
    source = as_points(input_cloud)

    def result(values):
        if isinstance(coarse, PointCloud):
            return coarse.with_points(values)
        return PointCloud(values)

    if not config.enabled or source.shape[0] < config.k_r:
        return result(points)

    if config.max_displacement is not None:
        limit = config.max_displacement
    elif grid is not None:
        limit = grid.diagonal
    else:
        limit = np.inf

    indices, distances = NeighborIndex(source).query(points, config.k_r)
    neighborhoods = source[indices]
    bandwidth = distances.mean(axis=1)
    bandwidth[bandwidth <= 0] = 1.0
    weights = np.exp(-(distances / bandwidth[:, None]) ** 2)
    weights /= weights.sum(axis=1, keepdims=True)

    centroids = np.einsum("mk,mkd->md", weights, neighborhoods)
    centered = neighborhoods - centroids[:, None, :]
    covariance = np.einsum("mk,mki,mkj->mij", weights, centered, centered)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    fit_ok = eigenvalues[:, 1] > RANK_TOLERANCE * np.maximum(eigenvalues[:, 2], RANK_TOLERANCE)
    normals = eigenvectors[:, :, 0]

    heights = np.sum((points - centroids) * normals, axis=1)
    targets = points - heights[:, None] * normals

    if config.degree == 2 and config.k_r >= 6:
        frame = np.stack([eigenvectors[:, :, 2], eigenvectors[:, :, 1], normals], axis=1)
        local = np.einsum("mij,mkj->mki", frame, centered)
        query = np.einsum("mij,mj->mi", frame, points - centroids)
        surface = _quadric_heights(local, weights, query[:, :2])
        targets = centroids + np.einsum("mi,mij->mj", np.column_stack([query[:, :2], surface]), frame)

    displacement = targets - points
    length = np.linalg.norm(displacement, axis=1)
    scale = np.where(length > limit, limit / np.maximum(length, 1e-300), 1.0)
    moved = points + displacement * scale[:, None]
    moved[~fit_ok] = points[~fit_ok]
    return result(moved)


def load_external_points(path: str) -> PointCloud:
    return read_pointcloud(path)
