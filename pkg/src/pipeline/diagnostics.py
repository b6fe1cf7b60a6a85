import logging
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage
from tqdm import tqdm

from ..config import DEFAULT_RESOLUTION, GT_LOGIT, METHODS, STREAM_BENCHMARK, STREAM_SAMPLER, SamplerConfig, make_rng, roundInt
from ..core.pointcloud import PointCloud
from ..metrics.losses import chamfer
from ..sampling.grid_sampler import CellSampleSet, sample_cells
from ..voxel.voxelizer import DensityField, VoxelGrid, density_ground_truth

logger = logging.getLogger(__name__)

OUTLIER_FRACTION = 0.01
OUTLIER_WEIGHT = 1e-4
OUTLIER_GAP = 4 # Outlier cells sit at least this many layers off the plane
BENCHMARK_INPUT = 64
BENCHMARK_RATE = 4.0
NEIGHBORHOOD = np.ones((3, 3, 3), dtype=bool) # 26-connected tolerance


"""
PlantedBenchmark

field - plane cells with weight 1/|plane| and logit +L, plus far outlier cells with weight 1e-4 and logit 0;
truth - ground-truth field of the plane points;
gt_points - a lattice with four points per plane cell.
"""
class PlantedBenchmark:
    def __init__(self, field: DensityField, truth: DensityField, gt_points: np.ndarray, plane_cells: np.ndarray, outlier_cells: np.ndarray) -> None:
        self.field = field
        self.truth = truth
        self.gt_points = gt_points
        self.plane_cells = plane_cells
        self.outlier_cells = outlier_cells

    @property
    def grid(self) -> VoxelGrid:
        return self.field.grid


def planted_benchmark(resolution: int = DEFAULT_RESOLUTION, seed: int = 0) -> PlantedBenchmark:
    grid = VoxelGrid(resolution)
    layer = resolution // 2
    i, j = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
    plane_cells = grid.flat_index(np.column_stack([i.ravel(), j.ravel(), np.full(i.size, layer)]))

    lattice = grid.lattice(np.arange(grid.cell_count))
    far = np.nonzero(np.abs(lattice[:, 2] - layer) >= OUTLIER_GAP)[0]
    count = roundInt(OUTLIER_FRACTION * grid.cell_count)
    outlier_cells = np.sort(make_rng(seed, STREAM_BENCHMARK).choice(far, size=count, replace=False))

    density = np.zeros(grid.cell_count)
    logits = np.full(grid.cell_count, -GT_LOGIT)
    density[plane_cells] = 1.0 / plane_cells.size
    logits[plane_cells] = GT_LOGIT
    density[outlier_cells] = OUTLIER_WEIGHT
    logits[outlier_cells] = 0.0
    field = DensityField(grid, density, logits, "planted")

    steps = (np.arange(2 * resolution) + 0.5) / (2 * resolution) - 0.5
    x, y = np.meshgrid(steps, steps, indexing="ij")
    z = (layer + 0.5) / resolution - 0.5
    gt_points = np.column_stack([x.ravel(), y.ravel(), np.full(x.size, z)])
    truth = density_ground_truth(PointCloud(gt_points), grid)
    return PlantedBenchmark(field, truth, gt_points, plane_cells, outlier_cells)


def covered_cells(cells: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    """Sampled cells plus their 26-neighborhood, as a flat boolean mask."""
    mask = np.zeros(grid.cell_count, dtype=bool)
    mask[np.asarray(cells, dtype=np.int64)] = True
    return ndimage.binary_dilation(mask.reshape(grid.shape), structure=NEIGHBORHOOD).reshape(-1)


def cell_statistics(cells: np.ndarray, truth: DensityField, gt_points: np.ndarray) -> Dict[str, float]:
    """precision, missing_rate and cell_cd of one set of sampled cells against the ground truth."""
    cells = np.unique(np.asarray(cells, dtype=np.int64))
    covered = covered_cells(cells, truth.grid)
    occupied = truth.occupied_cells()
    return {
        # Truth densities are point fractions, so this is the share of points in covered cells
        "precision": float(np.clip(truth.density[covered].sum(), 0.0, 1.0)),
        "missing_rate": float(np.count_nonzero(~covered[occupied]) / max(occupied.size, 1)),
        "cell_cd": chamfer(truth.grid.cell_centers(cells), gt_points),
    }


class SamplingDiagnostics:
    """Per method and multiplier averages of precision, missing_rate and cell_cd."""

    COLUMNS = ("method", "multiplier", "precision", "missing_rate", "cell_cd")

    def __init__(self, table: pd.DataFrame) -> None:
        self.table = table

    def curve(self, method: str) -> pd.DataFrame:
        return self.table[self.table["method"] == method].reset_index(drop=True)

    def value(self, method: str, multiplier: float, column: str) -> float:
        rows = self.table[(self.table["method"] == method) & (self.table["multiplier"] == float(multiplier))]
        return float(rows[column].iloc[0])


def sampling_diagnostics(
    field: DensityField,
    truth: DensityField,
    gt_points: np.ndarray,
    multipliers: Sequence[float],
    methods: Iterable[str] = METHODS,
    input_count: int = BENCHMARK_INPUT,
    rate: float = BENCHMARK_RATE,
    seed: int = 0,
    repeats: int = 1,
) -> SamplingDiagnostics:
    if field.grid != truth.grid:
        raise ValueError(f"resolution mismatch: field R={field.resolution}, truth R={truth.resolution}")
    rows = []
    for method in methods:
        for multiplier in multipliers:
            config = SamplerConfig(rate, multiplier, seed, method)
            stats = []
            for repeat in tqdm(range(repeats), desc=f"{config.method} x{multiplier}", leave=False, disable=repeats < 2):
                samples = sample_cells(field, config, input_count, make_rng(seed, STREAM_SAMPLER, repeat))
                stats.append(cell_statistics(samples.cells, truth, gt_points))
            rows.append({
                "method": config.method,
                "multiplier": float(multiplier),
                **{key: float(np.mean([entry[key] for entry in stats])) for key in stats[0]},
            })
    logger.info(f"Diagnostics over {len(rows)} method/multiplier pairs, {repeats} seeds each")
    return SamplingDiagnostics(pd.DataFrame(rows, columns=list(SamplingDiagnostics.COLUMNS)))


def count_outliers(samples: CellSampleSet, outlier_cells: np.ndarray) -> int:
    return int(np.isin(samples.cells, outlier_cells).sum())


def outlier_counts(
    benchmark: PlantedBenchmark,
    methods: Sequence[str] = ("mfps", "mdfps"),
    multiplier: float = 4.0,
    seeds: int = 50,
    seed: int = 0,
) -> Dict[str, float]:
    """Mean number of outlier cells each method keeps on the planted benchmark."""
    counts: Dict[str, float] = {}
    for method in methods:
        config = SamplerConfig(BENCHMARK_RATE, multiplier, seed, method)
        total = 0
        for repeat in range(seeds):
            samples = sample_cells(benchmark.field, config, BENCHMARK_INPUT, make_rng(seed, STREAM_SAMPLER, repeat))
            total += count_outliers(samples, benchmark.outlier_cells)
        counts[config.method] = total / seeds
    return counts


def benchmark_diagnostics(
    multipliers: Sequence[float] = (1, 2, 3, 4),
    methods: Iterable[str] = METHODS,
    repeats: int = 20,
    seed: int = 0,
    benchmark: Optional[PlantedBenchmark] = None,
) -> SamplingDiagnostics:
    benchmark = benchmark if benchmark is not None else planted_benchmark(seed=seed)
    return sampling_diagnostics(
        benchmark.field, benchmark.truth, benchmark.gt_points, multipliers, methods,
        BENCHMARK_INPUT, BENCHMARK_RATE, seed, repeats,
    )
