import os
import math
from typing import Any, Dict, Mapping, Optional

import numpy as np
from dotenv import load_dotenv

load_dotenv()  # This will load variables from .env file in the project root directory

# ------------------------
# CONSTANTS
# ------------------------
GT_LOGIT = 10.0 # Hard ground-truth occupancy logit, keeps BCE finite
OCCUPANCY_EPS = 1e-4 # Analytic occupancy indicator is squeezed to [eps, 1 - eps] before the logit

DEFAULT_RESOLUTION = 32
MAX_RESOLUTION = 64
MULTI_RESOLUTIONS = (4, 8, 16, 32) # Multi-scale voxelization, coarse to fine

DEFAULT_PATCH_SIZE = 256
PATCH_OVERLAP = 2.0 # Seed count = ceil(PATCH_OVERLAP * N / patch_size)

DEFAULT_RATE = 4.0
DEFAULT_MULTIPLIER = 4.0 # "The resampling rate is 4", read as candidates = 4 * rN
DEFAULT_SMOOTHING_RADIUS = 0
SPARSE_SMOOTHING_RADIUS = 1 # Recommended for inputs below SPARSE_POINT_COUNT points
SPARSE_POINT_COUNT = 512

REFINE_NEIGHBORS = 8
JITTER_SCALE = 0.1 # Degenerate placement jitter magnitude, in cells

GC_K = 16 # Points in a surface patch
ENCODER_DIM = 128
ENCODER_HIDDEN = 64
ENCODER_NEIGHBORS = 8
ENCODER_SEED = 20240125
GC_CHUNK = 512 # Patches encoded per batch

SHARP_CD_TEMPERATURE = 1e-2
METRIC_SCALE = 1e3 # Reported values are multiplied by 10^3

NOISE_LEVELS = (0.005, 0.01, 0.02)
PERTURBATION_LEVELS = (0.002, 0.005, 0.01, 0.02)

# Loss balance weights, empirically set
LAMBDA_SHARP_CD = 300.0
LAMBDA_GC = 0.01
LAMBDA_REG = 0.3
LAMBDA_BCE = 100.0
LAMBDA_MSE = 1e10

# Named random sub-streams, all derived from the one 64-bit config seed
STREAM_PATCH = 1
STREAM_SAMPLER = 2
STREAM_JITTER = 3
STREAM_SYNTHETIC = 4
STREAM_GC = 5
STREAM_BENCHMARK = 6

METHOD_ALIASES = {
    "topk": "topk",
    "threshold-topk": "topk",
    "multinomial": "multinomial",
    "mfps": "mfps",
    "multinomial+fps": "mfps",
    "mdfps": "mdfps",
    "multinomial+dfps": "mdfps",
}
METHODS = ("topk", "multinomial", "mfps", "mdfps")

OUTPUT_FORMATS = ("xyz", "ply")

# Environment
THREADS = int(os.getenv("VOXUP_THREADS", "1"))
DEFAULT_SEED = int(os.getenv("VOXUP_SEED", "0"))
DATABASE_URL = os.getenv("DATABASE_URL") # Optional results store, nothing is persisted when unset


def roundInt(number) -> int:
    # Half-up rounding, round() would send 2.5 to 2
    return int(math.floor(number + 0.5))


def make_rng(seed: int, stream: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)] + [int(key) for key in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def get_thread_count(requested: Optional[int] = None) -> int:
    threads = requested if requested is not None else THREADS
    return max(int(threads), 1)


def normalize_method(method: str) -> str:
    key = method.strip().lower()
    if key not in METHOD_ALIASES:
        raise ValueError(f"Unknown sampler method '{method}', expected one of {sorted(METHOD_ALIASES)}")
    return METHOD_ALIASES[key]


class SamplerConfig:
    def __init__(
        self,
        upsample_rate: float = DEFAULT_RATE,
        resample_multiplier: float = DEFAULT_MULTIPLIER,
        seed: int = DEFAULT_SEED,
        method: str = "mdfps",
    ) -> None:
        if not upsample_rate > 0:
            raise ValueError(f"upsample_rate must be positive, got {upsample_rate}")
        if not resample_multiplier >= 1:
            raise ValueError(f"resample_multiplier must be >= 1, got {resample_multiplier}")
        self.upsample_rate = float(upsample_rate)
        self.resample_multiplier = float(resample_multiplier)
        self.seed = int(seed)
        self.method = normalize_method(method)

    def with_rate(self, upsample_rate: float) -> "SamplerConfig":
        return SamplerConfig(upsample_rate, self.resample_multiplier, self.seed, self.method)

    def __repr__(self) -> str:
        return (f"SamplerConfig(rate={self.upsample_rate}, multiplier={self.resample_multiplier}, "
                f"seed={self.seed}, method={self.method})")


class RefineConfig:
    def __init__(
        self,
        k_r: int = REFINE_NEIGHBORS,
        max_displacement: Optional[float] = None, # None means the cell diagonal
        enabled: bool = True,
        degree: int = 1,
    ) -> None:
        if k_r < 3:
            raise ValueError(f"k_r must be >= 3, got {k_r}")
        if degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {degree}")
        if max_displacement is not None and max_displacement < 0:
            raise ValueError("max_displacement must be non-negative")
        self.k_r = int(k_r)
        self.max_displacement = max_displacement
        self.enabled = bool(enabled)
        self.degree = int(degree)


class LossWeights:
    def __init__(
        self,
        sharp_cd: float = LAMBDA_SHARP_CD,
        gc: float = LAMBDA_GC,
        reg: float = LAMBDA_REG,
        bce: float = LAMBDA_BCE,
        mse: float = LAMBDA_MSE,
    ) -> None:
        for name, value in (("sharp_cd", sharp_cd), ("gc", gc), ("reg", reg), ("bce", bce), ("mse", mse)):
            if value < 0:
                raise ValueError(f"Loss weight {name} must be >= 0, got {value}")
        self.sharp_cd = float(sharp_cd)
        self.gc = float(gc)
        self.reg = float(reg)
        self.bce = float(bce)
        self.mse = float(mse)


def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"Not a boolean: '{value}'")


"""
PipelineConfig

patch_size - points per K-NN patch;
seed_count - patch seeds, None for ceil(PATCH_OVERLAP * N / patch_size);
backend - 'analytic' or 'file:PATH' (a .puvx grid or a directory of patch_XXXX.puvx grids);
smoothing_radius - box smoothing of the analytic splat, None picks by input size;
threads - parallel patches, results are identical for any value.
"""
class PipelineConfig:
    KEYS = (
        "input", "output", "mesh", "gt", "rate", "resolution", "sampler", "multiplier", "backend",
        "refine", "no_refine", "refine_k", "refine_degree", "seed", "format", "patch_size",
        "seeds", "smoothing", "threads",
    )

    def __init__(
        self,
        patch_size: int = DEFAULT_PATCH_SIZE,
        seed_count: Optional[int] = None,
        upsample_rate: float = DEFAULT_RATE,
        sampler: Optional[SamplerConfig] = None,
        backend: str = "analytic",
        resolution: int = DEFAULT_RESOLUTION,
        smoothing_radius: Optional[int] = None,
        refine: Optional[RefineConfig] = None,
        seed: int = DEFAULT_SEED,
        threads: Optional[int] = None,
        output_format: Optional[str] = None,
        input_path: Optional[str] = None,
        output_path: Optional[str] = None,
        mesh_path: Optional[str] = None,
        gt_path: Optional[str] = None,
    ) -> None:
        if not upsample_rate > 0:
            raise ValueError(f"rate must be positive, got {upsample_rate}")
        if not 1 <= resolution <= MAX_RESOLUTION:
            raise ValueError(f"resolution must be in [1, {MAX_RESOLUTION}], got {resolution}")
        if patch_size < 1:
            raise ValueError(f"patch_size must be positive, got {patch_size}")
        if seed_count is not None and seed_count < 1:
            raise ValueError(f"seed count must be positive, got {seed_count}")
        if smoothing_radius is not None and smoothing_radius < 0:
            raise ValueError("smoothing radius must be non-negative")
        if not (backend == "analytic" or backend.startswith("file:")):
            raise ValueError(f"backend must be 'analytic' or 'file:PATH', got '{backend}'")
        if output_format is not None and output_format not in OUTPUT_FORMATS:
            raise ValueError(f"format must be one of {OUTPUT_FORMATS}, got '{output_format}'")

        self.refine = refine if refine is not None else RefineConfig()
        if self.refine.k_r > patch_size:
            raise ValueError(f"refine neighborhood {self.refine.k_r} exceeds patch size {patch_size}")

        sampler = sampler if sampler is not None else SamplerConfig(seed=seed)
        # The pipeline rate and seed win over whatever the sampler was built with
        self.sampler = SamplerConfig(upsample_rate, sampler.resample_multiplier, seed, sampler.method)
        self.patch_size = int(patch_size)
        self.seed_count = seed_count
        self.upsample_rate = float(upsample_rate)
        self.backend = backend
        self.resolution = int(resolution)
        self.smoothing_radius = smoothing_radius
        self.seed = int(seed)
        self.threads = get_thread_count(threads)
        self.output_format = output_format
        self.input_path = input_path
        self.output_path = output_path
        self.mesh_path = mesh_path
        self.gt_path = gt_path

    @property
    def backend_path(self) -> Optional[str]:
        return self.backend[len("file:"):] if self.backend.startswith("file:") else None

    def smoothing_for(self, point_count: int) -> int:
        if self.smoothing_radius is not None:
            return self.smoothing_radius
        return SPARSE_SMOOTHING_RADIUS if point_count < SPARSE_POINT_COUNT else DEFAULT_SMOOTHING_RADIUS

    def with_rate(self, upsample_rate: float) -> "PipelineConfig":
        return self._copy(upsample_rate=upsample_rate)

    def with_method(self, method: str) -> "PipelineConfig":
        sampler = SamplerConfig(self.upsample_rate, self.sampler.resample_multiplier, self.seed, method)
        return self._copy(sampler=sampler)

    def _copy(self, **changes) -> "PipelineConfig":
        values = dict(
            patch_size=self.patch_size,
            seed_count=self.seed_count,
            upsample_rate=self.upsample_rate,
            sampler=self.sampler,
            backend=self.backend,
            resolution=self.resolution,
            smoothing_radius=self.smoothing_radius,
            refine=self.refine,
            seed=self.seed,
            threads=self.threads,
            output_format=self.output_format,
            input_path=self.input_path,
            output_path=self.output_path,
            mesh_path=self.mesh_path,
            gt_path=self.gt_path,
        )
        values.update(changes)
        return PipelineConfig(**values)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "PipelineConfig":
        unknown = [key for key in values if key not in cls.KEYS]
        if unknown:
            raise ValueError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")

        def get(key, cast, default=None):
            value = values.get(key)
            return default if value is None else cast(value)

        seed = get("seed", int, DEFAULT_SEED)
        rate = get("rate", float, DEFAULT_RATE)
        refine_enabled = get("refine", _parse_bool, True) and not get("no_refine", _parse_bool, False)
        refine = RefineConfig(
            k_r=get("refine_k", int, REFINE_NEIGHBORS),
            enabled=refine_enabled,
            degree=get("refine_degree", int, 1),
        )
        sampler = SamplerConfig(
            upsample_rate=rate,
            resample_multiplier=get("multiplier", float, DEFAULT_MULTIPLIER),
            seed=seed,
            method=get("sampler", str, "mdfps"),
        )
        return cls(
            patch_size=get("patch_size", int, DEFAULT_PATCH_SIZE),
            seed_count=get("seeds", int),
            upsample_rate=rate,
            sampler=sampler,
            backend=get("backend", str, "analytic"),
            resolution=get("resolution", int, DEFAULT_RESOLUTION),
            smoothing_radius=get("smoothing", int),
            refine=refine,
            seed=seed,
            threads=get("threads", int),
            output_format=get("format", str),
            input_path=get("input", str),
            output_path=get("output", str),
            mesh_path=get("mesh", str),
            gt_path=get("gt", str),
        )

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Mapping[str, Any]] = None) -> "PipelineConfig":
        values = read_key_values(path)
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        return cls.from_mapping(values)


def read_key_values(path: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_number}: expected key=value, got '{raw.strip()}'")
            key, value = line.split("=", 1)
            key = key.strip().lstrip("-").replace("-", "_")
            if key not in PipelineConfig.KEYS:
                raise ValueError(f"{path}:{line_number}: unknown key '{key}'")
            values[key] = value.strip()
    return values
