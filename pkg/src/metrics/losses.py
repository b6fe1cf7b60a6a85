import math
import logging
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from ..config import METRIC_SCALE, SHARP_CD_TEMPERATURE, LossWeights
from ..core.pointcloud import ArrayLike, as_points
from ..sampling.grid_sampler import CellSampleSet
from ..voxel.voxelizer import VoxelGrid
from .mesh import TriangleMesh, point_to_mesh

logger = logging.getLogger(__name__)


def _non_empty(P: ArrayLike, Q: ArrayLike):
    P, Q = as_points(P), as_points(Q)
    if P.shape[0] == 0 or Q.shape[0] == 0:
        raise ValueError("Distances need two non-empty point sets")
    return P, Q


def nearest_squared(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Squared distance from every point of P to its nearest point of Q."""
    _, nearest = cKDTree(Q).query(P, k=1)
    return np.sum((P - Q[np.asarray(nearest, dtype=np.int64)]) ** 2, axis=1)


def chamfer(P: ArrayLike, Q: ArrayLike) -> float:
    P, Q = _non_empty(P, Q)
    return float(nearest_squared(P, Q).mean() + nearest_squared(Q, P).mean())


def _smooth_max(values: np.ndarray, temperature: float) -> float:
    if values.size == 1:
        return float(values[0])
    return float(temperature * (logsumexp(values / temperature) - math.log(values.size)))


def sharp_chamfer(P: ArrayLike, Q: ArrayLike, temperature: float = SHARP_CD_TEMPERATURE) -> float:
    """Chamfer with each directional mean replaced by a log-sum-exp smooth maximum."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    P, Q = _non_empty(P, Q)
    value = _smooth_max(nearest_squared(P, Q), temperature) + _smooth_max(nearest_squared(Q, P), temperature)
    return max(value, 0.0)


def hausdorff(P: ArrayLike, Q: ArrayLike) -> float:
    P, Q = _non_empty(P, Q)
    return float(math.sqrt(max(nearest_squared(P, Q).max(), nearest_squared(Q, P).max())))


def reg_loss(P: ArrayLike, cells: Union[CellSampleSet, np.ndarray], grid: VoxelGrid) -> float:
    """Sum of how far each point strays past the cell diagonal from its cell center."""
    points = as_points(P)
    owners = cells.expanded() if isinstance(cells, CellSampleSet) else np.asarray(cells, dtype=np.int64).reshape(-1)
    if owners.size != points.shape[0]:
        raise ValueError(f"{points.shape[0]} points but {owners.size} owning cells")
    distance = np.linalg.norm(points - grid.cell_centers(owners), axis=1)
    return float(np.sum(np.maximum(distance - grid.diagonal, 0.0)))


def _same_length(a, b, what: str):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"{what}: {a.size} predictions but {b.size} targets")
    return a, b


def bce_loss(pred_logits, truth_labels) -> float:
    x, y = _same_length(pred_logits, truth_labels, "BCE")
    # Stable form of -[y log s(x) + (1 - y) log(1 - s(x))]
    return float(np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))))


def mse_loss(pred_density, truth_density) -> float:
    pred, truth = _same_length(pred_density, truth_density, "MSE")
    return float(np.mean((pred - truth) ** 2))


class LossParts:
    """
    The seven terms of the total loss: Chamfer and sharp Chamfer of the coarse points,
    Chamfer and geometric consistency of the refined points, the outlier penalty,
    occupancy BCE and density MSE.
    """

    NAMES = ("cd_coarse", "sharp_cd_coarse", "cd_refined", "gc", "reg", "bce", "mse")

    def __init__(
        self,
        cd_coarse: float = 0.0,
        sharp_cd_coarse: float = 0.0,
        cd_refined: float = 0.0,
        gc: float = 0.0,
        reg: float = 0.0,
        bce: float = 0.0,
        mse: float = 0.0,
    ) -> None:
        self.cd_coarse = float(cd_coarse)
        self.sharp_cd_coarse = float(sharp_cd_coarse)
        self.cd_refined = float(cd_refined)
        self.gc = float(gc)
        self.reg = float(reg)
        self.bce = float(bce)
        self.mse = float(mse)

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in self.NAMES}


def total_loss(parts: LossParts, weights: Optional[LossWeights] = None) -> float:
    weights = weights if weights is not None else LossWeights()
    for name, value in parts.as_dict().items():
        if not math.isfinite(value):
            raise ValueError(f"Loss part {name} is not finite ({value})")
    return (
        parts.cd_coarse
        + weights.sharp_cd * parts.sharp_cd_coarse
        + parts.cd_refined
        + weights.gc * parts.gc
        + weights.reg * parts.reg
        + weights.bce * parts.bce
        + weights.mse * parts.mse
    )


"""
MetricsReport

Values are kept in normalized units; to_table and to_key_values report them multiplied by 10^3.
"""
class MetricsReport:
    def __init__(
        self,
        cd: float,
        hd: float,
        p2f_mean: Optional[float] = None,
        p2f_max: Optional[float] = None,
        losses: Optional[LossParts] = None,
    ) -> None:
        for name, value in (("cd", cd), ("hd", hd), ("p2f_mean", p2f_mean), ("p2f_max", p2f_max)):
            if value is not None and not (math.isfinite(value) and value >= 0):
                raise ValueError(f"Metric {name} must be finite and non-negative, got {value}")
        self.cd = float(cd)
        self.hd = float(hd)
        self.p2f_mean = p2f_mean
        self.p2f_max = p2f_max
        self.losses = losses

    def scaled(self) -> Dict[str, float]:
        values = {"cd": self.cd, "hd": self.hd}
        if self.p2f_mean is not None:
            values["p2f_mean"] = self.p2f_mean
            values["p2f_max"] = self.p2f_max
        return {key: value * METRIC_SCALE for key, value in values.items()}

    def to_key_values(self) -> List[str]:
        lines = [f"{key}={value:.6f}" for key, value in self.scaled().items()]
        if self.losses is not None:
            lines += [f"loss_{key}={value:.9g}" for key, value in self.losses.as_dict().items()]
        return lines

    def to_table(self) -> pd.DataFrame:
        return pd.DataFrame([self.scaled()]).round(6)

    def __repr__(self) -> str:
        return "MetricsReport(" + ", ".join(self.to_key_values()) + ")"


def evaluate_cloud(pred: ArrayLike, gt: ArrayLike, mesh: Optional[TriangleMesh] = None) -> MetricsReport:
    p2f_mean, p2f_max = point_to_mesh(pred, mesh) if mesh is not None else (None, None)
    report = MetricsReport(chamfer(pred, gt), hausdorff(pred, gt), p2f_mean, p2f_max)
    logger.info(f"Evaluated {len(as_points(pred))} points: " + ", ".join(report.to_key_values()))
    return report
