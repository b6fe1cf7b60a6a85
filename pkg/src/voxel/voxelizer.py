import logging
from typing import Dict, Iterable, Optional

import numpy as np
from scipy import ndimage
from scipy.special import logit

from ..config import GT_LOGIT, MAX_RESOLUTION, MULTI_RESOLUTIONS, OCCUPANCY_EPS
from ..core.pointcloud import PointCloud

logger = logging.getLogger(__name__)

PROVENANCES = ("analytic", "ground-truth", "external-file", "planted")
NORMALIZED = ("analytic", "ground-truth")

# Corner offsets of a cell, row-major over (di, dj, dk)
VERTEX_OFFSETS = np.array(
    [[di, dj, dk] for di in (0, 1) for dj in (0, 1) for dk in (0, 1)], dtype=np.int64
)


class VoxelGrid:
    """
    R^3 cells over the normalized cube [-0.5, 0.5]^3. Flat cell index = (i * R + j) * R + k.
    """

    def __init__(self, resolution: int) -> None:
        if int(resolution) != resolution or not 1 <= resolution <= MAX_RESOLUTION:
            raise ValueError(f"resolution must be an integer in [1, {MAX_RESOLUTION}], got {resolution}")
        self.resolution = int(resolution)
        self.side = 1.0 / self.resolution
        self.diagonal = float(np.sqrt(3.0)) / self.resolution
        self.cell_count = self.resolution ** 3

    def __eq__(self, other) -> bool:
        return isinstance(other, VoxelGrid) and other.resolution == self.resolution

    def __hash__(self) -> int:
        return hash(self.resolution)

    def __repr__(self) -> str:
        return f"VoxelGrid({self.resolution})"

    @property
    def shape(self):
        return (self.resolution,) * 3

    def flat_index(self, ijk: np.ndarray) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
        return np.ravel_multi_index((ijk[:, 0], ijk[:, 1], ijk[:, 2]), self.shape)

    def lattice(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1)
        return np.stack(np.unravel_index(cells, self.shape), axis=1)

    def cell_centers(self, cells) -> np.ndarray:
        return (self.lattice(cells) + 0.5) / self.resolution - 0.5

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        # Half-open cells, the top face +0.5 belongs to the last cell
        ijk = np.floor((np.asarray(points) + 0.5) * self.resolution).astype(np.int64)
        return np.clip(ijk, 0, self.resolution - 1)


class DensityField:
    def __init__(self, grid: VoxelGrid, density, occupancy_logit, provenance: str) -> None:
        if provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got '{provenance}'")
        density = np.array(density, dtype=np.float64).reshape(-1)
        occupancy_logit = np.array(occupancy_logit, dtype=np.float64).reshape(-1)
        if density.size != grid.cell_count or occupancy_logit.size != grid.cell_count:
            raise ValueError(
                f"Expected {grid.cell_count} cells for resolution {grid.resolution}, "
                f"got {density.size} densities and {occupancy_logit.size} logits"
            )
        if np.any(density < 0) or not np.all(np.isfinite(density)):
            raise ValueError("Densities must be finite and non-negative")
        if not np.all(np.isfinite(occupancy_logit)):
            raise ValueError("Occupancy logits must be finite")
        if provenance in NORMALIZED and abs(density.sum() - 1.0) > 1e-6:
            raise ValueError(f"{provenance} density must sum to 1, got {density.sum()}")
        density.setflags(write=False)
        occupancy_logit.setflags(write=False)
        self.grid = grid
        self.density = density
        self.occupancy_logit = occupancy_logit
        self.provenance = provenance

    @property
    def resolution(self) -> int:
        return self.grid.resolution

    def occupied_cells(self) -> np.ndarray:
        return np.nonzero(self.density > 0)[0]

    def counts(self, point_count: int) -> np.ndarray:
        # Densities are fractions, counts are exposed as fraction * N
        return self.density * point_count

    def __repr__(self) -> str:
        return f"DensityField(R={self.resolution}, provenance={self.provenance}, occupied={self.occupied_cells().size})"


class GriddingOutput:
    def __init__(self, grid: VoxelGrid, displacements: np.ndarray, vertices: np.ndarray, cell_indices: np.ndarray) -> None:
        self.grid = grid
        self.displacements = displacements
        self.vertices = vertices
        self.cell_indices = cell_indices


def _require_normalized(cloud: PointCloud) -> None:
    if not cloud.is_normalized():
        raise ValueError("Cloud is not normalized, every coordinate must lie in [-0.5, 0.5]")


def grid_displacements(cloud: PointCloud, grid: VoxelGrid) -> GriddingOutput:
    _require_normalized(cloud)
    ijk = grid.cell_of(cloud.points)
    corners = ijk[:, None, :] + VERTEX_OFFSETS[None, :, :]
    vertices = corners / grid.resolution - 0.5
    displacements = cloud.points[:, None, :] - vertices
    return GriddingOutput(grid, displacements, vertices, grid.flat_index(ijk))


def multi_resolution_displacements(
    cloud: PointCloud, resolutions: Iterable[int] = MULTI_RESOLUTIONS
) -> Dict[int, GriddingOutput]:
    return {int(r): grid_displacements(cloud, VoxelGrid(r)) for r in resolutions}


def density_ground_truth(cloud: PointCloud, grid: VoxelGrid) -> DensityField:
    _require_normalized(cloud)
    cells = grid.flat_index(grid.cell_of(cloud.points))
    counts = np.bincount(cells, minlength=grid.cell_count).astype(np.float64)
    density = counts / len(cloud)
    logits = np.where(counts > 0, GT_LOGIT, -GT_LOGIT)
    return DensityField(grid, density, logits, "ground-truth")


def splat_mass(cloud: PointCloud, grid: VoxelGrid) -> np.ndarray:
    """Trilinear mass per cell before normalization; sums to N."""
    _require_normalized(cloud)
    # Canonical accumulation order, so point order never changes the sums
    points = cloud.points[np.lexsort((cloud.points[:, 2], cloud.points[:, 1], cloud.points[:, 0]))]
    # Continuous cell coordinate, cell centers sit on integers
    coords = (points + 0.5) * grid.resolution - 0.5
    snapped = np.round(coords)
    coords = np.where(np.abs(coords - snapped) < 1e-9, snapped, coords)
    base = np.floor(coords).astype(np.int64)
    frac = coords - base

    mass = np.zeros(grid.cell_count, dtype=np.float64)
    for offset in VERTEX_OFFSETS:
        weight = np.prod(np.where(offset == 1, frac, 1.0 - frac), axis=1)
        cells = np.clip(base + offset, 0, grid.resolution - 1)
        mass += np.bincount(grid.flat_index(cells), weights=weight, minlength=grid.cell_count)
    return mass


def splat_density(cloud: PointCloud, grid: VoxelGrid, smoothing_radius: int = 0) -> DensityField:
    if smoothing_radius < 0:
        raise ValueError("smoothing radius must be non-negative")
    mass = splat_mass(cloud, grid).reshape(grid.shape)
    indicator = (mass > 0).astype(np.float64)
    if smoothing_radius > 0:
        width = 2 * smoothing_radius + 1
        kernel = np.ones((width, width, width)) / width ** 3
        mass = ndimage.convolve(mass, kernel, mode="constant", cval=0.0)
        indicator = ndimage.convolve(indicator, kernel, mode="constant", cval=0.0)
    density = mass.reshape(-1) / mass.sum()
    occupancy = np.clip(indicator.reshape(-1), OCCUPANCY_EPS, 1.0 - OCCUPANCY_EPS)
    logger.debug(f"Splatted {len(cloud)} points into {np.count_nonzero(density)} cells at R={grid.resolution}")
    return DensityField(grid, density, logit(occupancy), "analytic")


def ground_truth_labels(field: DensityField) -> np.ndarray:
    return (np.asarray(field.occupancy_logit) > 0).astype(np.float64)
