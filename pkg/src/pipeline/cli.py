import os
import sys
import logging
import argparse
from typing import List, Optional, Sequence

import numpy as np

from ..config import (
    GC_K,
    METHOD_ALIASES,
    METHODS,
    NOISE_LEVELS,
    OUTPUT_FORMATS,
    PERTURBATION_LEVELS,
    PipelineConfig,
    normalize_method,
    read_key_values,
)
from ..consistency.geometric_consistency import SurfaceEncoder, gc_loss, perturbation_study
from ..core.pointcloud import PointCloud, normalize
from ..database.store import store_diagnostics, store_evaluation
from ..voxel.voxelizer import VoxelGrid, density_ground_truth, splat_density
from .diagnostics import benchmark_diagnostics, planted_benchmark, sampling_diagnostics
from .io import (
    DataFormatError,
    load_encoder,
    read_mesh,
    read_pointcloud,
    save_encoder,
    write_density_grid,
    write_mesh,
    write_pointcloud,
)
from .synthetic import SHAPES, generate_synthetic
from .upsampling import (
    evaluate_in_frame,
    extract_patches,
    frame_transform,
    loss_breakdown,
    noise_robustness,
    sampler_ablation,
    upsample_cloud,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def float_list(text: str) -> List[float]:
    try:
        return [float(value) for value in text.split(",") if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got '{text}'")


def method_list(text: str) -> List[str]:
    try:
        return [normalize_method(value) for value in text.split(",") if value.strip()]
    except ValueError as error:
        raise argparse.ArgumentTypeError(str(error))


def add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file, flags override it")
    p.add_argument("--rate", type=float, help="Upsampling rate r (default: 4)")
    p.add_argument("--resolution", type=int, help="Voxel grid resolution (default: 32)")
    p.add_argument("--sampler", choices=sorted(METHOD_ALIASES), help="Cell sampler (default: mdfps)")
    p.add_argument("--multiplier", type=float, help="Candidate multiplier, >= 1 (default: 4)")
    p.add_argument("--backend", help="Density backend: analytic or file:PATH (default: analytic)")
    p.add_argument("--no-refine", dest="no_refine", action="store_true", default=None, help="Skip refinement")
    p.add_argument("--refine-k", dest="refine_k", type=int, help="Refinement neighborhood size (default: 8)")
    p.add_argument("--refine-degree", dest="refine_degree", type=int, choices=[1, 2], help="1 plane, 2 quadric")
    p.add_argument("--seed", type=int, help="64-bit seed (default: VOXUP_SEED or 0)")
    p.add_argument("--patch-size", dest="patch_size", type=int, help="Points per patch (default: 256)")
    p.add_argument("--seeds", type=int, help="Patch seed count (default: ceil(2N / patch size))")
    p.add_argument("--smoothing", type=int, help="Box smoothing radius of the analytic density")
    p.add_argument("--threads", type=int, help="Parallel patches (default: VOXUP_THREADS or 1)")


def pipeline_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> PipelineConfig:
    """Flags override the config file, the file overrides environment defaults. Bad settings are usage errors."""
    try:
        values = read_key_values(args.config) if getattr(args, "config", None) else {}
        for key in PipelineConfig.KEYS:
            value = getattr(args, key, None)
            if value is not None:
                values[key] = value
        return PipelineConfig.from_mapping(values)
    except ValueError as error:
        parser.error(str(error))


def require(parser: argparse.ArgumentParser, **values) -> None:
    missing = [name for name, value in values.items() if not value]
    if missing:
        parser.error("missing " + ", ".join(f"--{name}" for name in missing))


def print_table(table) -> None:
    print(table.to_string(index=False))


# ------------------------
# Commands
# ------------------------
def cmd_upsample(args, parser) -> int:
    config = pipeline_config(args, parser)
    require(parser, input=config.input_path, output=config.output_path)
    output = upsample_cloud(read_pointcloud(config.input_path), config)
    write_pointcloud(config.output_path, output, config.output_format)
    return EXIT_OK


def cmd_evaluate(args, parser) -> int:
    mesh = read_mesh(args.mesh, triangulate=args.triangulate) if args.mesh else None
    report = evaluate_in_frame(read_pointcloud(args.input), read_pointcloud(args.gt), mesh)
    if args.table:
        print_table(report.to_table())
    else:
        print("\n".join(report.to_key_values()))
    store_evaluation(report, args.input, args.gt, args.mesh, args.db)
    return EXIT_OK


def cmd_diagnose(args, parser) -> int:
    if bool(args.input) != bool(args.gt):
        parser.error("--input and --gt go together")
    config = pipeline_config(args, parser)

    if args.ablation:
        require(parser, input=args.input, gt=args.gt)
        table = sampler_ablation(read_pointcloud(args.input), read_pointcloud(args.gt), args.rates, config)
        print_table(table)
        return EXIT_OK

    if args.input:
        sparse, gt = read_pointcloud(args.input), read_pointcloud(args.gt)
        to_frame = frame_transform(gt)
        grid = VoxelGrid(config.resolution)
        truth_points = np.clip(to_frame(gt), -0.5, 0.5)
        field = splat_density(PointCloud(np.clip(to_frame(sparse), -0.5, 0.5)), grid, config.smoothing_for(len(sparse)))
        truth = density_ground_truth(PointCloud(truth_points), grid)
        diagnostics = sampling_diagnostics(
            field, truth, truth_points, args.multipliers, args.methods,
            len(sparse), config.upsample_rate, config.seed, args.repeats,
        )
        source = args.input
    else:
        benchmark = planted_benchmark(config.resolution, config.seed)
        diagnostics = benchmark_diagnostics(args.multipliers, args.methods, args.repeats, config.seed, benchmark)
        source = "planted"

    for method in args.methods:
        print(f"# {method}")
        print_table(diagnostics.curve(method).drop(columns="method"))
    store_diagnostics(diagnostics.table, source, config.resolution, config.seed, args.repeats, args.db)
    return EXIT_OK


def cmd_gen(args, parser) -> int:
    cloud, mesh = generate_synthetic(args.shape, args.n, args.seed, args.noise)
    write_pointcloud(args.output, cloud, args.format)
    if args.mesh_output:
        write_mesh(args.mesh_output, mesh)
    return EXIT_OK


def cmd_gc_loss(args, parser) -> int:
    encoder = load_encoder(args.encoder) if args.encoder else SurfaceEncoder()
    if args.export_encoder:
        save_encoder(args.export_encoder, encoder)
    target = read_pointcloud(args.gt)
    if args.perturbation:
        table, rho = perturbation_study(target, args.levels, args.trials, encoder, args.k, args.seed)
        print_table(table)
        print(f"spearman={rho:.6f}")
        return EXIT_OK
    require(parser, input=args.input)
    print(f"gc_loss={gc_loss(read_pointcloud(args.input), target, encoder, args.k):.9g}")
    return EXIT_OK


def cmd_density(args, parser) -> int:
    config = pipeline_config(args, parser)
    require(parser, input=config.input_path, output=config.output_path)
    cloud = read_pointcloud(config.input_path)
    patches = extract_patches(cloud, config) if args.per_patch else [cloud]
    if args.per_patch:
        os.makedirs(config.output_path, exist_ok=True)

    grid = VoxelGrid(config.resolution)
    for patch_id, patch in enumerate(patches):
        normalized = normalize(patch)
        if args.truth:
            field = density_ground_truth(normalized, grid)
        else:
            field = splat_density(normalized, grid, config.smoothing_for(len(normalized)))
        path = os.path.join(config.output_path, f"patch_{patch_id:04d}.puvx") if args.per_patch else config.output_path
        write_density_grid(path, field)
    return EXIT_OK


def cmd_losses(args, parser) -> int:
    config = pipeline_config(args, parser)
    require(parser, input=config.input_path, gt=config.gt_path)
    parts, total = loss_breakdown(read_pointcloud(config.input_path), read_pointcloud(config.gt_path), config)
    for name, value in parts.as_dict().items():
        print(f"{name}={value:.9g}")
    print(f"total={total:.9g}")
    return EXIT_OK


def cmd_robustness(args, parser) -> int:
    config = pipeline_config(args, parser)
    print_table(noise_robustness(args.shape, args.n, config.upsample_rate, args.levels, config))
    return EXIT_OK


def build_argparser() -> ArgumentParser:
    p = ArgumentParser(prog="voxup", description="Density-guided voxel point cloud upsampling")
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    sub = p.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    s = sub.add_parser("upsample", help="Upsample a point cloud file")
    s.add_argument("-i", "--input", help="Input points (.xyz or .ply)")
    s.add_argument("-o", "--output", help="Output points")
    s.add_argument("--format", choices=OUTPUT_FORMATS, help="Output format (default: from the extension)")
    add_pipeline_flags(s)
    s.set_defaults(handler=cmd_upsample)

    s = sub.add_parser("evaluate", help="CD, HD and P2F (x10^3) of a prediction")
    s.add_argument("-i", "--input", required=True, help="Predicted points")
    s.add_argument("--gt", required=True, help="Ground-truth points")
    s.add_argument("--mesh", help="Ground-truth mesh (.obj or .ply) for P2F")
    s.add_argument("--triangulate", action="store_true", help="Fan-triangulate polygons with more than 3 corners")
    s.add_argument("--table", action="store_true", help="Print a table instead of key=value lines")
    s.add_argument("--db", help="Results store URL (default: DATABASE_URL)")
    s.set_defaults(handler=cmd_evaluate)

    s = sub.add_parser("diagnose", help="Sampling accuracy per method and multiplier")
    s.add_argument("--multipliers", type=float_list, default=[1.0, 2.0, 3.0, 4.0], help="Comma separated (default: 1,2,3,4)")
    s.add_argument("--methods", type=method_list, default=list(METHODS), help="Comma separated samplers")
    s.add_argument("--repeats", type=int, default=20, help="Seeds averaged per row (default: 20)")
    s.add_argument("-i", "--input", help="Sparse points, the planted benchmark is used without it")
    s.add_argument("--gt", help="Ground-truth points for --input")
    s.add_argument("--ablation", action="store_true", help="End-to-end CD/HD per sampler over --rates")
    s.add_argument("--rates", type=float_list, default=[2.0, 4.0, 8.0], help="Rates for --ablation")
    s.add_argument("--db", help="Results store URL (default: DATABASE_URL)")
    add_pipeline_flags(s)
    s.set_defaults(handler=cmd_diagnose)

    s = sub.add_parser("gen", help="Generate a synthetic shape")
    s.add_argument("--shape", choices=SHAPES, default="sphere")
    s.add_argument("-n", "--n", type=int, required=True, help="Number of points")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma in shape units")
    s.add_argument("-o", "--output", required=True, help="Output points")
    s.add_argument("--format", choices=OUTPUT_FORMATS)
    s.add_argument("--mesh-output", dest="mesh_output", help="Write the exact mesh as OBJ")
    s.set_defaults(handler=cmd_gen)

    s = sub.add_parser("gc-loss", help="Latent geometric consistency loss")
    s.add_argument("-i", "--input", help="Seed points")
    s.add_argument("--gt", required=True, help="Target points")
    s.add_argument("--k", type=int, default=GC_K, help="Surface patch size (default: 16)")
    s.add_argument("--encoder", help="PUGC weights file (default: seeded random encoder)")
    s.add_argument("--export-encoder", dest="export_encoder", help="Write the encoder weights as PUGC")
    s.add_argument("--perturbation", action="store_true", help="Loss under increasing seed perturbation")
    s.add_argument("--levels", type=float_list, default=list(PERTURBATION_LEVELS), help="Sigmas, fractions of the bbox diagonal")
    s.add_argument("--trials", type=int, default=100, help="Seeds per perturbation level")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(handler=cmd_gc_loss)

    s = sub.add_parser("density", help="Write a density grid (PUVX) for the file backend")
    s.add_argument("-i", "--input", help="Input points")
    s.add_argument("-o", "--output", help="Output .puvx, or a directory with --per-patch")
    s.add_argument("--truth", action="store_true", help="Ground-truth counts instead of the analytic splat")
    s.add_argument("--per-patch", dest="per_patch", action="store_true", help="One patch_XXXX.puvx per patch")
    add_pipeline_flags(s)
    s.set_defaults(handler=cmd_density)

    s = sub.add_parser("losses", help="All loss terms and the weighted total for one cloud")
    s.add_argument("-i", "--input", help="Sparse points")
    s.add_argument("--gt", help="Dense ground-truth points")
    add_pipeline_flags(s)
    s.set_defaults(handler=cmd_losses)

    s = sub.add_parser("robustness", help="Upsampling quality under input noise")
    s.add_argument("--shape", choices=SHAPES, default="sphere")
    s.add_argument("-n", "--n", type=int, default=2048)
    s.add_argument("--levels", type=float_list, default=list(NOISE_LEVELS), help="Fractions of the bounding-sphere radius")
    add_pipeline_flags(s)
    s.set_defaults(handler=cmd_robustness)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_argparser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif args.quiet:
        logging.getLogger().setLevel(logging.WARNING)
    try:
        return args.handler(args, parser)
    except (DataFormatError, ValueError, OSError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_DATA
