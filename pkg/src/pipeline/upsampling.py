import os
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..config import (
    METRIC_SCALE,
    NOISE_LEVELS,
    PATCH_OVERLAP,
    STREAM_SAMPLER,
    STREAM_SYNTHETIC,
    LossWeights,
    PipelineConfig,
    make_rng,
    roundInt,
)
from ..consistency.geometric_consistency import SurfaceEncoder, gc_loss
from ..core.pointcloud import ArrayLike, NeighborIndex, PointCloud, as_points, denormalize, fps, normalize
from ..metrics.losses import (
    LossParts,
    MetricsReport,
    bce_loss,
    chamfer,
    evaluate_cloud,
    mse_loss,
    reg_loss,
    sharp_chamfer,
    total_loss,
)
from ..metrics.mesh import TriangleMesh
from ..reconstruction.reconstructor import place_coarse, refine
from ..sampling.grid_sampler import CellSampleSet, sample_cells
from ..voxel.voxelizer import DensityField, VoxelGrid, density_ground_truth, ground_truth_labels, splat_density
from .io import read_density_grid
from .synthetic import bounding_sphere_radius, generate_synthetic

logger = logging.getLogger(__name__)


class PatchResult:
    """Everything one patch run produces; coarse and refined points are in the patch's normalized frame."""

    def __init__(self, normalized: PointCloud, field: DensityField, samples: CellSampleSet, coarse: PointCloud, refined: PointCloud) -> None:
        self.normalized = normalized
        self.field = field
        self.samples = samples
        self.coarse = coarse
        self.refined = refined

    @property
    def output(self) -> PointCloud:
        return denormalize(self.refined)


def seed_count(point_count: int, config: PipelineConfig) -> int:
    if config.seed_count is not None:
        return config.seed_count
    return int(math.ceil(PATCH_OVERLAP * point_count / config.patch_size))


def patch_indices(cloud: ArrayLike, config: PipelineConfig) -> List[np.ndarray]:
    """Point indices of every K-NN patch around FPS seeds; together they cover the cloud."""
    points = as_points(cloud)
    n = points.shape[0]
    if n <= config.patch_size or config.backend_path is not None and not os.path.isdir(config.backend_path):
        if n < config.patch_size:
            logger.warning(f"Cloud has {n} points, fewer than the patch size {config.patch_size}; using one patch")
        return [np.arange(n)]

    index = NeighborIndex(points)
    seeds = fps(points, min(seed_count(n, config), n))
    neighbors, _ = index.query(points[seeds], config.patch_size)

    patches, seen = [], set()
    covered = np.zeros(n, dtype=bool)

    def add(row: np.ndarray) -> None:
        key = tuple(np.sort(row).tolist())
        if key in seen:
            return
        seen.add(key)
        patches.append(row)
        covered[row] = True

    for row in neighbors:
        add(row)
    # Extra patches around the first uncovered point until every point is in a patch
    while not covered.all():
        extra = int(np.argmin(covered))
        add(index.query(points[extra:extra + 1], config.patch_size)[0][0])
    logger.debug(f"{len(patches)} patches over {n} points")
    return patches


def extract_patches(cloud: ArrayLike, config: PipelineConfig) -> List[PointCloud]:
    points = as_points(cloud)
    return [PointCloud(points[rows]) for rows in patch_indices(points, config)]


def _density_field(normalized: PointCloud, config: PipelineConfig, patch_id: int) -> DensityField:
    path = config.backend_path
    if path is None:
        return splat_density(normalized, VoxelGrid(config.resolution), config.smoothing_for(len(normalized)))
    if os.path.isdir(path):
        path = os.path.join(path, f"patch_{patch_id:04d}.puvx")
    return read_density_grid(path)


def upsample_patch(patch: ArrayLike, config: PipelineConfig, patch_id: int = 0) -> PatchResult:
    """normalize, density backend, cell sampling, coarse placement, refinement."""
    source = patch if isinstance(patch, PointCloud) else PointCloud(patch)
    normalized = normalize(source)
    field = _density_field(normalized, config, patch_id)
    rng = make_rng(config.seed, STREAM_SAMPLER, patch_id)
    samples = sample_cells(field, config.sampler, len(normalized), rng)
    coarse = place_coarse(samples, field.grid, normalized, config.refine.k_r)
    refined = refine(coarse, normalized, config.refine, field.grid)
    logger.debug(f"Patch {patch_id}: {len(samples)} cells, {samples.total} points")
    return PatchResult(normalized, field, samples, coarse, refined)


def merge_and_downsample(patches: Sequence[ArrayLike], target: int) -> PointCloud:
    merged = np.concatenate([as_points(patch) for patch in patches])
    unique = np.unique(merged, axis=0)
    if unique.shape[0] < target:
        raise ValueError(f"Only {unique.shape[0]} distinct points to downsample to {target}")
    return PointCloud(unique[fps(unique, target)])


def upsample_cloud(cloud: ArrayLike, config: PipelineConfig) -> PointCloud:
    start_date = datetime.now(timezone.utc)
    source = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    target = roundInt(config.upsample_rate * len(source))
    if target < 1:
        raise ValueError(f"rate {config.upsample_rate} on {len(source)} points yields no output points")
    patches = extract_patches(source, config)
    logger.info(f"Upsampling {len(source)} points x{config.upsample_rate} over {len(patches)} patches ({config.sampler.method})")

    def run(item):
        patch_id, patch = item
        return upsample_patch(patch, config, patch_id).output.points

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        outputs = list(tqdm(pool.map(run, enumerate(patches)), total=len(patches), desc="patches", leave=False))

    result = source.with_points(merge_and_downsample(outputs, target).points)
    end_date = datetime.now(timezone.utc)
    logger.info(f"Produced {len(result)} points in {(end_date - start_date).total_seconds():.2f} seconds")
    return result


def frame_transform(reference: ArrayLike):
    """Map into the normalized frame of `reference`."""
    frame = normalize(reference if isinstance(reference, PointCloud) else PointCloud(reference))

    def apply(points) -> np.ndarray:
        return (as_points(points) - frame.center) / frame.scale

    return apply


def evaluate_in_frame(pred: ArrayLike, gt: ArrayLike, mesh: Optional[TriangleMesh] = None) -> MetricsReport:
    """Metrics with prediction, ground truth and mesh mapped into the ground truth's normalized frame."""
    to_frame = frame_transform(gt)
    framed_mesh = TriangleMesh(to_frame(mesh.vertices), mesh.faces) if mesh is not None else None
    return evaluate_cloud(to_frame(pred), to_frame(gt), framed_mesh)


def loss_breakdown(
    sparse: ArrayLike,
    dense_gt: ArrayLike,
    config: PipelineConfig,
    encoder: Optional[SurfaceEncoder] = None,
    weights: Optional[LossWeights] = None,
):
    """The seven loss terms and their weighted total for one whole-cloud patch, in the sparse cloud's frame."""
    result = upsample_patch(sparse, config)
    grid = result.field.grid
    to_frame = frame_transform(sparse)
    truth_points = to_frame(dense_gt)
    truth = density_ground_truth(PointCloud(np.clip(truth_points, -0.5, 0.5)), grid)

    parts = LossParts(
        cd_coarse=chamfer(result.coarse, truth_points),
        sharp_cd_coarse=sharp_chamfer(result.coarse, truth_points),
        cd_refined=chamfer(result.refined, truth_points),
        gc=gc_loss(result.refined, truth_points, encoder),
        reg=reg_loss(result.coarse, result.samples, grid),
        bce=bce_loss(result.field.occupancy_logit, ground_truth_labels(truth)),
        mse=mse_loss(result.field.density, truth.density),
    )
    total = total_loss(parts, weights)
    logger.info(f"Total loss {total:.6g} over {result.samples.total} points")
    return parts, total


def noise_robustness(
    shape: str,
    n: int,
    rate: float,
    levels: Sequence[float] = NOISE_LEVELS,
    config: Optional[PipelineConfig] = None,
) -> pd.DataFrame:
    """
    Upsampling quality under Gaussian input noise, levels given as fractions of the
    bounding-sphere radius. Metrics are x10^3 in the ground truth's normalized frame.
    """
    config = (config if config is not None else PipelineConfig()).with_rate(rate)
    clean, mesh = generate_synthetic(shape, n, config.seed)
    gt, _ = generate_synthetic(shape, roundInt(rate * n), config.seed + 1)
    radius = bounding_sphere_radius(clean)

    rows = []
    for position, level in enumerate(tqdm(levels, desc="noise levels", leave=False)):
        rng = make_rng(config.seed, STREAM_SYNTHETIC, position + 1)
        noisy = clean.points + rng.normal(0.0, level * radius, size=clean.points.shape)
        report = evaluate_in_frame(upsample_cloud(noisy, config), gt, mesh)
        rows.append({"noise": float(level), **report.scaled()})
    return pd.DataFrame(rows)


def sampler_ablation(
    cloud: ArrayLike,
    gt: ArrayLike,
    rates: Sequence[float],
    config: Optional[PipelineConfig] = None,
    methods: Sequence[str] = ("multinomial", "mfps", "mdfps"),
) -> pd.DataFrame:
    """End-to-end CD and HD (x10^3) per resampling method and rate."""
    config = config if config is not None else PipelineConfig()
    rows = []
    for method in methods:
        for rate in tqdm(rates, desc=method, leave=False):
            output = upsample_cloud(cloud, config.with_method(method).with_rate(rate))
            report = evaluate_in_frame(output, gt)
            rows.append({"method": method, "rate": float(rate), "cd": report.cd * METRIC_SCALE, "hd": report.hd * METRIC_SCALE})
    return pd.DataFrame(rows)
