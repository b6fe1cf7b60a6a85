import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from ..config import (
    ENCODER_DIM,
    ENCODER_HIDDEN,
    ENCODER_NEIGHBORS,
    ENCODER_SEED,
    GC_CHUNK,
    GC_K,
    METRIC_SCALE,
    PERTURBATION_LEVELS,
    STREAM_GC,
    make_rng,
)
from ..core.pointcloud import ArrayLike, NeighborIndex, as_points

logger = logging.getLogger(__name__)

EDGE_INPUT = 6 # [x_i, x_j - x_i] for 3D coordinates


class SurfacePatchPair:
    """
    Real patch: the k points of the target nearest to the seed, nearest first.
    Mimic patch: the same with the nearest point replaced by the seed itself.
    """

    def __init__(self, real: np.ndarray, mimic: np.ndarray, seed: np.ndarray) -> None:
        self.real = real
        self.mimic = mimic
        self.seed = seed

    @property
    def k(self) -> int:
        return self.real.shape[0]


def _patch_indices(index: NeighborIndex, seeds: np.ndarray, k: int) -> np.ndarray:
    available = min(k, len(index))
    indices, _ = index.query(seeds, available)
    if available < k:
        # Too few targets, pad with the nearest one
        padding = np.repeat(indices[:, :1], k - available, axis=1)
        indices = np.concatenate([indices, padding], axis=1)
    return indices


def build_patch_pair(seed, target: ArrayLike, index: Optional[NeighborIndex] = None, k: int = GC_K) -> SurfacePatchPair:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    points = as_points(target)
    if points.shape[0] == 0:
        raise ValueError("Target cloud is empty")
    index = index if index is not None else NeighborIndex(points)
    seed = np.asarray(seed, dtype=np.float64).reshape(3)
    real = points[_patch_indices(index, seed[None, :], k)[0]]
    mimic = real.copy()
    mimic[0] = seed
    return SurfacePatchPair(real, mimic, seed)


class SurfaceEncoder:
    """
    Fixed edge-feature encoder: two rounds of max-over-neighbors of ReLU([h_i, h_j - h_i] W),
    then a global max over the patch. Patches are centered on their centroid first.
    Layer weights are (fan_in, fan_out) matrices.
    """

    def __init__(
        self,
        dim: int = ENCODER_DIM,
        hidden: int = ENCODER_HIDDEN,
        neighbors: int = ENCODER_NEIGHBORS,
        seed: int = ENCODER_SEED,
        layers: Optional[Sequence[np.ndarray]] = None,
    ) -> None:
        if neighbors < 1:
            raise ValueError(f"neighbors must be positive, got {neighbors}")
        if layers is None:
            rng = np.random.default_rng(seed)
            layers = []
            for fan_in, fan_out in ((EDGE_INPUT, hidden), (2 * hidden, dim)):
                layers.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        layers = [np.array(layer, dtype=np.float64) for layer in layers]
        if len(layers) != 2:
            raise ValueError(f"Encoder needs 2 layers, got {len(layers)}")
        if layers[0].shape[0] != EDGE_INPUT or layers[1].shape[0] != 2 * layers[0].shape[1]:
            raise ValueError(f"Incompatible layer shapes {[layer.shape for layer in layers]}")
        for layer in layers:
            layer.setflags(write=False)
        self.layers: List[np.ndarray] = layers
        self.neighbors = int(neighbors)
        self.seed = seed

    @property
    def dim(self) -> int:
        return self.layers[-1].shape[1]

    def _graph(self, features: np.ndarray) -> np.ndarray:
        batch, k, _ = features.shape
        count = min(k - 1, self.neighbors)
        if count < 1:
            return np.zeros((batch, k, 1), dtype=np.int64)
        squared = np.sum((features[:, :, None, :] - features[:, None, :, :]) ** 2, axis=3)
        squared[:, np.arange(k), np.arange(k)] = np.inf
        return np.argsort(squared, axis=2, kind="stable")[:, :, :count]

    @staticmethod
    def _edge_round(features: np.ndarray, neighbors: np.ndarray, weights: np.ndarray) -> np.ndarray:
        width = features.shape[2]
        # [h_i, h_j - h_i] W = h_i (W_a - W_b) + h_j W_b
        own = features @ (weights[:width] - weights[width:])
        other = features @ weights[width:]
        gathered = other[np.arange(features.shape[0])[:, None, None], neighbors]
        return np.maximum(own[:, :, None, :] + gathered, 0.0).max(axis=2)

    def encode_batch(self, patches: np.ndarray) -> np.ndarray:
        """(B, k, 3) patches to (B, D) codes."""
        patches = np.asarray(patches, dtype=np.float64)
        if patches.ndim != 3 or patches.shape[2] != 3 or patches.shape[1] == 0:
            raise ValueError(f"Patches must have shape (B, k, 3) with k >= 1, got {patches.shape}")
        codes = np.empty((patches.shape[0], self.dim))
        for start in range(0, patches.shape[0], GC_CHUNK):
            chunk = patches[start:start + GC_CHUNK]
            features = chunk - chunk.mean(axis=1, keepdims=True)
            graph = self._graph(features)
            for weights in self.layers:
                features = self._edge_round(features, graph, weights)
            codes[start:start + GC_CHUNK] = features.max(axis=1)
        return codes


def encode_patch(patch: ArrayLike, encoder: Optional[SurfaceEncoder] = None) -> np.ndarray:
    encoder = encoder if encoder is not None else SurfaceEncoder()
    points = as_points(patch)
    if points.shape[0] == 0:
        raise ValueError("Cannot encode an empty patch")
    return encoder.encode_batch(points[None, :, :])[0]


def gc_distances(P: ArrayLike, Q: ArrayLike, encoder: Optional[SurfaceEncoder] = None, k: int = GC_K) -> np.ndarray:
    """Per-seed code distance between the real and the mimic patch."""
    encoder = encoder if encoder is not None else SurfaceEncoder()
    seeds, target = as_points(P), as_points(Q)
    if seeds.shape[0] == 0 or target.shape[0] == 0:
        raise ValueError("gc_loss needs non-empty seed and target clouds")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    real = target[_patch_indices(NeighborIndex(target), seeds, k)]
    mimic = real.copy()
    mimic[:, 0, :] = seeds
    unchanged = np.all(real[:, 0, :] == seeds, axis=1)

    distances = np.zeros(seeds.shape[0])
    moved = np.nonzero(~unchanged)[0]
    if moved.size:
        codes = encoder.encode_batch(np.concatenate([real[moved], mimic[moved]]))
        distances[moved] = np.linalg.norm(codes[:moved.size] - codes[moved.size:], axis=1)
    return distances


def gc_loss(P: ArrayLike, Q: ArrayLike, encoder: Optional[SurfaceEncoder] = None, k: int = GC_K) -> float:
    return float(gc_distances(P, Q, encoder, k).mean())


def perturbation_study(
    target: ArrayLike,
    sigmas: Sequence[float] = PERTURBATION_LEVELS,
    seeds_per_level: int = 100,
    encoder: Optional[SurfaceEncoder] = None,
    k: int = GC_K,
    seed: int = 0,
) -> Tuple[pd.DataFrame, float]:
    """
    Mean consistency loss of target points pushed off the surface by Gaussian noise
    (sigma as a fraction of the bounding-box diagonal), against the seed Chamfer term.
    Returns the per-level table and the Spearman correlation between sigma and the loss.
    """
    points = as_points(target)
    encoder = encoder if encoder is not None else SurfaceEncoder()
    rng = make_rng(seed, STREAM_GC)
    count = min(seeds_per_level, points.shape[0])
    chosen = points[rng.choice(points.shape[0], size=count, replace=False)]
    directions = rng.standard_normal(chosen.shape)
    diagonal = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    index = NeighborIndex(points)

    rows = []
    for sigma in sigmas:
        seeds = chosen + directions * sigma * diagonal
        nearest = index.nearest_distances(seeds)
        rows.append({
            "sigma": float(sigma),
            "gc_mean": gc_loss(seeds, points, encoder, k) * METRIC_SCALE,
            "seed_cd": float(np.mean(nearest ** 2)) * METRIC_SCALE,
        })
    table = pd.DataFrame(rows)
    rho = float(spearmanr(table["sigma"], table["gc_mean"])[0]) if len(table) > 1 else float("nan")
    logger.info(f"Perturbation study over {len(table)} levels, spearman rho {rho:.3f}")
    return table, rho
