"""Coarse point placement inside sampled cells and the local-surface refinement."""
import numpy as np
import pytest

from src.config import RefineConfig, SamplerConfig, make_rng
from src.core.pointcloud import NeighborIndex, PointCloud
from src.pipeline.io import DataFormatError
from src.reconstruction.reconstructor import (
    expand_cells,
    load_external_points,
    place_coarse,
    placement_params,
    refine,
)
from src.sampling.grid_sampler import CellSampleSet, sample_cells
from src.voxel.voxelizer import VoxelGrid, splat_density


def lattice_plane(z=0.0):
    axis = (np.arange(21) - 10) * 0.01
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])


def test_first_point_of_a_cell_sits_mid_square():
    params, cells = placement_params(CellSampleSet([4, 9], [3, 1]))
    assert cells.tolist() == [4, 4, 4, 9]
    assert np.allclose(params[0], [0.5, 0.5])
    assert np.allclose(params[3], [0.5, 0.5])
    assert len({tuple(row) for row in params[:3]}) == 3


def test_single_point_lands_on_the_plane_through_the_center():
    grid = VoxelGrid(8)
    cell = grid.flat_index([[4, 4, 4]])[0]
    center = grid.cell_centers([cell])[0]
    placed = place_coarse(CellSampleSet([cell], [1]), grid, lattice_plane(center[2]))
    assert np.allclose(placed.points, [center], atol=1e-12)


def test_points_project_onto_an_offset_plane():
    grid = VoxelGrid(8)
    cell = grid.flat_index([[4, 4, 4]])[0]
    placed = place_coarse(CellSampleSet([cell], [1]), grid, lattice_plane(0.0))
    assert np.allclose(placed.points, [[0.0625, 0.0625, 0.0]], atol=1e-12)


def test_many_points_stay_on_plane_and_near_the_cell():
    grid = VoxelGrid(8)
    cell = grid.flat_index([[4, 4, 4]])[0]
    center = grid.cell_centers([cell])[0]
    placed = place_coarse(CellSampleSet([cell], [20]), grid, lattice_plane(center[2])).points
    assert placed.shape == (20, 3)
    assert np.allclose(placed[:, 2], center[2], atol=1e-12)
    assert np.all(np.linalg.norm(placed - center, axis=1) <= grid.diagonal + 1e-12)
    assert len(np.unique(placed, axis=0)) == 20


def test_degenerate_neighborhood_uses_jittered_center():
    grid = VoxelGrid(8)
    line = np.column_stack([np.linspace(-0.4, 0.4, 30), np.zeros(30), np.zeros(30)])
    cells = grid.flat_index([[2, 4, 4], [5, 4, 4]])
    placed = place_coarse(CellSampleSet(cells, [4, 2]), grid, line).points
    centers = grid.cell_centers(expand_cells(CellSampleSet(cells, [4, 2])))
    assert np.all(np.linalg.norm(placed - centers, axis=1) <= 0.1 / grid.resolution + 1e-12)


def test_placement_stays_within_cell_diagonal(normalized_sphere):
    grid = VoxelGrid(32)
    field = splat_density(normalized_sphere, grid)
    samples = sample_cells(field, SamplerConfig(4.0, 4.0, seed=0), len(normalized_sphere))
    placed = place_coarse(samples, grid, normalized_sphere)
    owners = grid.cell_centers(expand_cells(samples))
    assert len(placed) == samples.total
    assert np.all(np.linalg.norm(placed.points - owners, axis=1) <= grid.diagonal + 1e-12)
    assert placed.scale == normalized_sphere.scale


def test_refine_keeps_points_on_the_surface():
    plane = lattice_plane()
    refined = refine([[0.003, 0.004, 0.0]], plane).points
    assert np.allclose(refined, [[0.003, 0.004, 0.0]], atol=1e-12)


def test_refine_projects_onto_the_local_plane():
    refined = refine([[0.003, 0.004, 0.02]], lattice_plane()).points
    assert abs(refined[0, 2]) < 1e-9
    assert np.allclose(refined[0, :2], [0.003, 0.004], atol=1e-9)


def test_refine_clamps_the_move():
    refined = refine([[0.0, 0.0, 0.05]], lattice_plane(), RefineConfig(max_displacement=0.01)).points
    assert np.isclose(refined[0, 2], 0.04)


def plane_residuals(points, source, k):
    indices, distances = NeighborIndex(source).query(points, k)
    weights = np.exp(-(distances / distances.mean(axis=1, keepdims=True)) ** 2)
    weights /= weights.sum(axis=1, keepdims=True)
    neighborhoods = source[indices]
    centroids = np.einsum("mk,mkd->md", weights, neighborhoods)
    centered = neighborhoods - centroids[:, None, :]
    normals = np.linalg.eigh(np.einsum("mk,mki,mkj->mij", weights, centered, centered))[1][:, :, 0]
    return lambda moved: np.abs(np.sum((moved - centroids) * normals, axis=1))


@pytest.mark.parametrize("limit", [None, 0.002])
def test_refine_never_moves_away_from_the_local_plane(limit):
    rng = make_rng(11, 0)
    noisy = lattice_plane()
    noisy[:, 2] += rng.normal(0.0, 0.002, len(noisy))
    coarse = np.column_stack([rng.uniform(-0.08, 0.08, (100, 2)), rng.uniform(-0.01, 0.01, 100)])
    config = RefineConfig(max_displacement=limit)
    residual = plane_residuals(coarse, noisy, config.k_r)
    before = residual(coarse)
    after = residual(refine(coarse, noisy, config).points)
    assert np.all(after <= before + 1e-12)
    assert after.mean() < before.mean()


def test_refine_identity_cases():
    coarse = PointCloud([[0.0, 0.0, 0.3]])
    assert np.array_equal(refine(coarse, lattice_plane(), RefineConfig(enabled=False)).points, coarse.points)
    assert np.array_equal(refine(coarse, lattice_plane()[:5]).points, coarse.points)


def test_quadric_refinement_follows_curvature():
    plane = lattice_plane()
    bowl = plane.copy()
    bowl[:, 2] = plane[:, 0] ** 2 + plane[:, 1] ** 2
    query = [[0.0, 0.0, 0.05]]
    curved = refine(query, bowl, RefineConfig(k_r=9, degree=2)).points
    flat = refine(query, bowl, RefineConfig(k_r=9, degree=1)).points
    assert abs(curved[0, 2]) < 1e-9
    assert flat[0, 2] > 1e-6


def test_load_external_points(tmp_path):
    path = tmp_path / "dense.xyz"
    path.write_text("# exported\n0 0 0\n1 0 0\n0 1 0\n")
    assert len(load_external_points(str(path))) == 3
    empty = tmp_path / "empty.xyz"
    empty.write_text("# nothing here\n")
    with pytest.raises(DataFormatError):
        load_external_points(str(empty))
