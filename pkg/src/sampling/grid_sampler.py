import math
import logging
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from ..config import STREAM_SAMPLER, SamplerConfig, make_rng, roundInt
from ..core.pointcloud import farthest_point_order
from ..voxel.voxelizer import DensityField, VoxelGrid

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator]


class CellSampleSet:
    """
    Distinct cell indices (ascending) with how many times each one was sampled.
    """

    def __init__(self, cells, counts) -> None:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1)
        counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        if cells.shape != counts.shape:
            raise ValueError(f"{cells.size} cells but {counts.size} multiplicities")
        if np.any(counts < 1):
            raise ValueError("Multiplicities must be >= 1")
        order = np.argsort(cells, kind="stable")
        cells, counts = cells[order], counts[order]
        if cells.size > 1 and np.any(np.diff(cells) == 0):
            raise ValueError("Cell indices must be distinct")
        cells.setflags(write=False)
        counts.setflags(write=False)
        self.cells = cells
        self.counts = counts

    @classmethod
    def from_draws(cls, draws) -> "CellSampleSet":
        cells, counts = np.unique(np.asarray(draws, dtype=np.int64), return_counts=True)
        return cls(cells, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return self.cells.size

    def expanded(self) -> np.ndarray:
        # One entry per output point, grouped by cell
        return np.repeat(self.cells, self.counts)

    def entries(self):
        return [(int(c), int(n)) for c, n in zip(self.cells, self.counts)]

    def __repr__(self) -> str:
        return f"CellSampleSet(cells={len(self)}, total={self.total})"


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed, STREAM_SAMPLER)


def effective_density(field: DensityField) -> np.ndarray:
    return field.density * expit(field.occupancy_logit)


def multinomial_sample(weights, trials: int, seed: SeedLike) -> CellSampleSet:
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("Weights must be finite and non-negative")
    total = weights.sum()
    if not total > 0:
        raise ValueError("empty density field")
    counts = _rng(seed).multinomial(int(trials), weights / total)
    cells = np.nonzero(counts)[0]
    return CellSampleSet(cells, counts[cells])


def dfps_cells(candidates: CellSampleSet, weights, grid: VoxelGrid, m: int) -> np.ndarray:
    """D-FPS over distinct candidate cells; returns cell indices in selection order."""
    cells = candidates.cells
    if cells.size == 0:
        raise ValueError("empty candidates")
    if not 1 <= m <= cells.size:
        raise ValueError(f"m must be in [1, {cells.size}], got {m}")
    cell_weights = np.asarray(weights, dtype=np.float64).reshape(-1)[cells]
    start = int(np.argmax(cell_weights))
    order = farthest_point_order(grid.cell_centers(cells), m, start, weights=cell_weights)
    return cells[order]


def fps_cells(candidates: CellSampleSet, grid: VoxelGrid, m: int) -> np.ndarray:
    return dfps_cells(candidates, np.ones(grid.cell_count), grid, m)


def allocate_points(cells, weights, total: int) -> CellSampleSet:
    """
    Largest-remainder split of `total` points over `cells` proportional to `weights`
    (aligned with `cells`); every cell gets at least one point.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    n = cells.size
    if n == 0:
        raise ValueError("No cells selected")
    if weights.size != n:
        raise ValueError(f"{n} cells but {weights.size} weights")
    if total < n:
        raise ValueError(f"Cannot give {n} cells at least one point each out of {total}")

    order = np.argsort(cells, kind="stable")
    cells, weights = cells[order], weights[order]
    if not weights.sum() > 0:
        weights = np.ones(n)

    quotas = weights / weights.sum() * total
    counts = np.floor(quotas).astype(np.int64)
    remainders = quotas - counts
    left = int(total - counts.sum())
    ranking = np.lexsort((np.arange(n), -remainders))
    while left > 0:
        step = min(left, n)
        counts[ranking[:step]] += 1
        left -= step

    # Empty cells borrow from the largest allocation
    for empty in np.nonzero(counts == 0)[0]:
        donor = int(np.argmax(counts))
        counts[donor] -= 1
        counts[empty] += 1

    if counts.sum() != total:
        raise RuntimeError(f"Allocated {counts.sum()} points, expected {total}")
    return CellSampleSet(cells, counts)


def threshold_topk_sample(field: DensityField, count: int) -> CellSampleSet:
    """Deterministic baseline: occupied-by-threshold cells, ranked by density, proportional counts."""
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    passing = np.nonzero(np.asarray(field.occupancy_logit) > 0.0)[0]
    if passing.size == 0:
        raise ValueError("no cell passes the occupancy threshold")
    density = field.density[passing]
    ranked = passing[np.lexsort((passing, -density))]
    kept = ranked[:count]
    return allocate_points(kept, field.density[kept], count)


def target_count(config: SamplerConfig, input_count: int) -> int:
    return roundInt(config.upsample_rate * input_count)


def candidate_count(config: SamplerConfig, input_count: int) -> int:
    return int(math.ceil(config.resample_multiplier * config.upsample_rate * input_count - 1e-9))


def sample_cells(
    field: DensityField,
    config: SamplerConfig,
    input_count: int,
    rng: Optional[np.random.Generator] = None,
) -> CellSampleSet:
    target = target_count(config, input_count)
    if target < 1:
        raise ValueError(f"rate {config.upsample_rate} on {input_count} points yields no output points")
    if config.method == "topk":
        return threshold_topk_sample(field, target)

    weights = effective_density(field)
    rng = rng if rng is not None else make_rng(config.seed, STREAM_SAMPLER)
    candidates = multinomial_sample(weights, candidate_count(config, input_count), rng)
    budget = min(len(candidates), target)
    logger.debug(f"{config.method}: {len(candidates)} distinct candidates, cell budget {budget}, target {target}")

    if config.method == "multinomial":
        cells, counts = candidates.cells, candidates.counts
        if len(candidates) > target:
            keep = np.lexsort((cells, -counts))[:target]
            cells, counts = cells[keep], counts[keep]
        return allocate_points(cells, counts, target)

    if config.method == "mdfps":
        selected = dfps_cells(candidates, weights, field.grid, budget)
    else:
        selected = fps_cells(candidates, field.grid, budget)
    return allocate_points(selected, weights[selected], target)
