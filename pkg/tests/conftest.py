import numpy as np
import pytest

from src.config import make_rng
from src.core.pointcloud import PointCloud, normalize
from src.pipeline.diagnostics import planted_benchmark
from src.pipeline.synthetic import generate_synthetic


@pytest.fixture
def rng():
    return make_rng(1234, 99)


@pytest.fixture(scope="session")
def sphere():
    cloud, mesh = generate_synthetic("sphere", 512, seed=0)
    return cloud, mesh


@pytest.fixture(scope="session")
def normalized_sphere(sphere):
    return normalize(sphere[0])


@pytest.fixture
def plane_lattice():
    # 21 x 21 points on z = 0, spacing 0.01
    axis = (np.arange(21) - 10) * 0.01
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return PointCloud(np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)]))


@pytest.fixture(scope="session")
def planted():
    return planted_benchmark(resolution=32, seed=0)
