"""Voxel grids, gridding displacements and density fields."""
import numpy as np
import pytest

from src.config import GT_LOGIT
from src.core.pointcloud import PointCloud
from src.voxel.voxelizer import (
    DensityField,
    VoxelGrid,
    density_ground_truth,
    grid_displacements,
    multi_resolution_displacements,
    splat_density,
    splat_mass,
)


@pytest.mark.parametrize("resolution", [0, 65, 2.5])
def test_invalid_resolution(resolution):
    with pytest.raises(ValueError):
        VoxelGrid(resolution)


def test_cell_centers_and_flat_index():
    grid = VoxelGrid(4)
    assert np.allclose(grid.cell_centers([0]), [[-0.375, -0.375, -0.375]])
    cells = np.arange(grid.cell_count)
    assert np.array_equal(grid.flat_index(grid.lattice(cells)), cells)
    assert grid.flat_index([[1, 2, 3]])[0] == (1 * 4 + 2) * 4 + 3


def test_displacement_at_vertex_is_zero():
    out = grid_displacements(PointCloud([[0, 0, 0]]), VoxelGrid(2))
    assert np.allclose(out.displacements[0, 0], 0.0)


def test_displacement_to_cell_corners():
    grid = VoxelGrid(4)
    out = grid_displacements(PointCloud([[0.125, 0.125, 0.125]]), grid)
    lengths = np.linalg.norm(out.displacements[0], axis=1)
    assert np.allclose(lengths, np.sqrt(3) * 0.125)
    assert np.allclose(out.vertices[0] + out.displacements[0], 0.125)


def test_top_face_belongs_to_last_cell():
    grid = VoxelGrid(4)
    out = grid_displacements(PointCloud([[0.5, 0.5, 0.5]]), grid)
    assert out.cell_indices[0] == grid.flat_index([[3, 3, 3]])[0]


def test_displacements_bounded_by_cell_side(normalized_sphere):
    grid = VoxelGrid(8)
    out = grid_displacements(normalized_sphere, grid)
    assert np.all(np.abs(out.displacements) <= grid.side + 1e-12)
    assert np.allclose(out.vertices + out.displacements, normalized_sphere.points[:, None, :])


def test_unnormalized_cloud_rejected():
    with pytest.raises(ValueError):
        grid_displacements(PointCloud([[0.0, 0, 0], [2.0, 0, 0]]), VoxelGrid(4))


def test_multi_resolution_shapes(normalized_sphere):
    outputs = multi_resolution_displacements(normalized_sphere)
    assert sorted(outputs) == [4, 8, 16, 32]
    assert outputs[16].displacements.shape == (len(normalized_sphere), 8, 3)


def test_density_ground_truth_fractions():
    grid = VoxelGrid(2)
    cloud = PointCloud([[-0.3, -0.3, -0.3]] * 3 + [[0.3, 0.3, 0.3]])
    field = density_ground_truth(cloud, grid)
    assert field.density[0] == 0.75 and field.density[7] == 0.25
    assert field.occupancy_logit[0] == GT_LOGIT
    assert field.occupancy_logit[1] == -GT_LOGIT
    assert field.provenance == "ground-truth"


def test_splat_point_at_cell_center():
    grid = VoxelGrid(4)
    center = grid.cell_centers([grid.flat_index([[1, 2, 3]])[0]])
    field = splat_density(PointCloud(center), grid)
    assert field.occupied_cells().tolist() == [grid.flat_index([[1, 2, 3]])[0]]
    assert field.density.max() == 1.0


def test_splat_point_between_eight_centers():
    field = splat_density(PointCloud([[0, 0, 0]]), VoxelGrid(4))
    assert field.occupied_cells().size == 8
    assert np.allclose(field.density[field.occupied_cells()], 0.125)


def test_splat_ignores_point_order(normalized_sphere, rng):
    grid = VoxelGrid(16)
    shuffled = PointCloud(normalized_sphere.points[rng.permutation(len(normalized_sphere))])
    assert np.array_equal(splat_density(normalized_sphere, grid).density, splat_density(shuffled, grid).density)
    assert np.isclose(splat_mass(normalized_sphere, grid).sum(), len(normalized_sphere))


def test_smoothed_splat_stays_normalized(normalized_sphere):
    field = splat_density(normalized_sphere, VoxelGrid(16), smoothing_radius=1)
    assert np.isclose(field.density.sum(), 1.0)
    assert np.all(np.isfinite(field.occupancy_logit))
    assert field.provenance == "analytic"


def test_splat_and_ground_truth_agree_on_centers():
    grid = VoxelGrid(8)
    cells = np.array([3, 77, 200, 411])
    cloud = PointCloud(grid.cell_centers(cells))
    splat = splat_density(cloud, grid)
    truth = density_ground_truth(cloud, grid)
    assert np.array_equal(splat.occupied_cells(), truth.occupied_cells())
    assert np.all(splat.occupancy_logit[cells] > 0)


def test_density_field_validation():
    grid = VoxelGrid(1)
    with pytest.raises(ValueError):
        DensityField(grid, [0.5], [0.0], "analytic")
    with pytest.raises(ValueError):
        DensityField(grid, [-1.0], [0.0], "external-file")
    assert DensityField(grid, [0.4], [0.0], "external-file").density[0] == 0.4
    assert DensityField(grid, [1.5], [0.0], "planted").provenance == "planted"
    with pytest.raises(ValueError, match="provenance"):
        DensityField(grid, [1.0], [0.0], "measured")
