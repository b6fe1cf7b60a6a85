import os
import logging
from typing import List, Optional, Tuple

import numpy as np

from ..consistency.geometric_consistency import SurfaceEncoder
from ..config import ENCODER_NEIGHBORS, OUTPUT_FORMATS
from ..core.pointcloud import ArrayLike, PointCloud, as_points
from ..metrics.mesh import TriangleMesh
from ..voxel.voxelizer import DensityField, VoxelGrid

logger = logging.getLogger(__name__)

GRID_MAGIC = b"PUVX"
GRID_VERSION = 1
ENCODER_MAGIC = b"PUGC"
ENCODER_VERSION = 1
POINT_EXTENSIONS = (".xyz", ".txt", ".pts")


class DataFormatError(ValueError):
    """A file that does not parse. Carries the line (text formats) or byte offset (binary formats)."""

    def __init__(self, path: str, message: str, line: Optional[int] = None, offset: Optional[int] = None) -> None:
        self.path = path
        self.line = line
        self.offset = offset
        if line is not None:
            where = f"{path}:{line}"
        elif offset is not None:
            where = f"{path}:@{offset}"
        else:
            where = path
        super().__init__(f"{where}: {message}")


def _extension(path: str) -> str:
    return os.path.splitext(path)[1].lower()


def _text_lines(path: str):
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            yield line_number, raw.split("#", 1)[0].strip()


# ------------------------
# Point clouds
# ------------------------
def read_xyz(path: str) -> np.ndarray:
    rows = []
    for line_number, line in _text_lines(path):
        if not line:
            continue
        fields = line.replace(",", " ").split()
        if len(fields) < 3:
            raise DataFormatError(path, f"expected 3 coordinates, got {len(fields)}", line=line_number)
        try:
            rows.append([float(value) for value in fields[:3]])
        except ValueError:
            raise DataFormatError(path, f"not a number in '{line}'", line=line_number)
    if not rows:
        raise DataFormatError(path, "no points in file")
    return np.array(rows, dtype=np.float64)


def _read_ply(path: str) -> Tuple[np.ndarray, Optional[List[List[int]]]]:
    lines = list(_text_lines(path))
    if not lines or lines[0][1] != "ply":
        raise DataFormatError(path, "missing 'ply' magic", line=1)

    elements = [] # (name, count, properties)
    body_start = None
    for position, (line_number, line) in enumerate(lines[1:], start=1):
        fields = line.split()
        if not fields or fields[0] in ("comment", "obj_info"):
            continue
        if fields[0] == "format":
            if len(fields) < 2 or fields[1] != "ascii":
                raise DataFormatError(path, "only ascii PLY is supported", line=line_number)
        elif fields[0] == "element":
            if len(fields) != 3 or not fields[2].isdigit():
                raise DataFormatError(path, f"bad element line '{line}'", line=line_number)
            elements.append((fields[1], int(fields[2]), []))
        elif fields[0] == "property":
            if not elements:
                raise DataFormatError(path, "property before any element", line=line_number)
            elements[-1][2].append(fields[-1])
        elif fields[0] == "end_header":
            body_start = position + 1
            break
        else:
            raise DataFormatError(path, f"unexpected header line '{line}'", line=line_number)
    if body_start is None:
        raise DataFormatError(path, "missing end_header")

    body = [(number, line) for number, line in lines[body_start:] if line]
    cursor = 0
    points, faces = None, None
    for name, count, properties in elements:
        if cursor + count > len(body):
            raise DataFormatError(path, f"expected {count} {name} rows, file ends early", line=lines[-1][0])
        rows = body[cursor:cursor + count]
        cursor += count
        if name == "vertex":
            try:
                axes = [properties.index(axis) for axis in ("x", "y", "z")]
            except ValueError:
                raise DataFormatError(path, "vertex element needs x, y and z properties")
            points = np.empty((count, 3))
            for row, (line_number, line) in enumerate(rows):
                fields = line.split()
                try:
                    points[row] = [float(fields[axis]) for axis in axes]
                except (ValueError, IndexError):
                    raise DataFormatError(path, f"bad vertex row '{line}'", line=line_number)
        elif name == "face":
            faces = []
            for line_number, line in rows:
                try:
                    values = [int(value) for value in line.split()]
                except ValueError:
                    raise DataFormatError(path, f"bad face row '{line}'", line=line_number)
                if not values or values[0] != len(values) - 1:
                    raise DataFormatError(path, f"face row count mismatch '{line}'", line=line_number)
                faces.append(values[1:] + [line_number])
    if points is None or len(points) == 0:
        raise DataFormatError(path, "no vertices in file")
    return points, faces


def read_pointcloud(path: str) -> PointCloud:
    """XYZ or ascii PLY points, in source units."""
    if _extension(path) == ".ply":
        points, _ = _read_ply(path)
    else:
        points = read_xyz(path)
    try:
        cloud = PointCloud(points)
    except ValueError as error:
        raise DataFormatError(path, str(error))
    logger.debug(f"Read {len(cloud)} points from {path}")
    return cloud


def output_format(path: str, fmt: Optional[str] = None) -> str:
    if fmt is not None:
        if fmt not in OUTPUT_FORMATS:
            raise ValueError(f"format must be one of {OUTPUT_FORMATS}, got '{fmt}'")
        return fmt
    return "ply" if _extension(path) == ".ply" else "xyz"


def write_pointcloud(path: str, cloud: ArrayLike, fmt: Optional[str] = None) -> None:
    # Values are written at f32 precision, 9 significant digits round-trip exactly
    points = as_points(cloud).astype(np.float32)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        if output_format(path, fmt) == "ply":
            handle.write(
                "ply\nformat ascii 1.0\n"
                f"element vertex {len(points)}\n"
                "property float x\nproperty float y\nproperty float z\nend_header\n"
            )
        np.savetxt(handle, points, fmt="%.9g")
    logger.info(f"Wrote {len(points)} points to {path}")


# ------------------------
# Meshes
# ------------------------
def _triangles(path: str, polygons: List[List[int]], triangulate: bool) -> List[List[int]]:
    triangles = []
    for polygon in polygons:
        *indices, line_number = polygon
        if len(indices) < 3:
            raise DataFormatError(path, "face with fewer than 3 vertices", line=line_number)
        if len(indices) > 3 and not triangulate:
            raise DataFormatError(path, "triangles only", line=line_number)
        for corner in range(1, len(indices) - 1):
            triangles.append([indices[0], indices[corner], indices[corner + 1]])
    return triangles


def _read_obj(path: str):
    vertices, polygons = [], []
    for line_number, line in _text_lines(path):
        fields = line.split()
        if not fields:
            continue
        if fields[0] == "v":
            try:
                vertices.append([float(value) for value in fields[1:4]])
            except ValueError:
                raise DataFormatError(path, f"bad vertex '{line}'", line=line_number)
            if len(vertices[-1]) != 3:
                raise DataFormatError(path, "vertex needs 3 coordinates", line=line_number)
        elif fields[0] == "f":
            polygon = []
            for field in fields[1:]:
                try:
                    index = int(field.split("/")[0])
                except ValueError:
                    raise DataFormatError(path, f"bad face index '{field}'", line=line_number)
                # OBJ indices are 1-based, negative ones count back from the last vertex
                polygon.append(index - 1 if index > 0 else len(vertices) + index)
            polygons.append(polygon + [line_number])
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), polygons


def read_mesh(path: str, triangulate: bool = False) -> TriangleMesh:
    """OBJ or ascii PLY triangle mesh. Polygons with more than 3 corners need `triangulate`."""
    if _extension(path) == ".ply":
        vertices, polygons = _read_ply(path)
        polygons = polygons or []
    else:
        vertices, polygons = _read_obj(path)
    faces = _triangles(path, polygons, triangulate)
    if not faces:
        raise DataFormatError(path, "no faces in mesh")
    try:
        mesh = TriangleMesh(vertices, faces)
    except ValueError as error:
        raise DataFormatError(path, str(error))
    logger.debug(f"Read {mesh} from {path}")
    return mesh


def write_mesh(path: str, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        np.savetxt(handle, mesh.vertices, fmt="v %.9g %.9g %.9g")
        np.savetxt(handle, mesh.faces + 1, fmt="f %d %d %d")
    logger.info(f"Wrote mesh with {len(mesh)} faces to {path}")


# ------------------------
# Binary density grids
# ------------------------
def write_density_grid(path: str, field: DensityField) -> None:
    header = np.array([GRID_VERSION, field.resolution], dtype="<u4")
    with open(path, "wb") as handle:
        handle.write(GRID_MAGIC)
        handle.write(header.tobytes())
        handle.write(field.density.astype("<f4").tobytes())
        handle.write(field.occupancy_logit.astype("<f4").tobytes())
    logger.info(f"Wrote density grid R={field.resolution} to {path}")


def read_density_grid(path: str) -> DensityField:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != GRID_MAGIC:
        raise DataFormatError(path, "missing 'PUVX' magic", offset=0)
    if len(data) < 12:
        raise DataFormatError(path, "truncated header", offset=len(data))
    version, resolution = (int(value) for value in np.frombuffer(data, dtype="<u4", count=2, offset=4))
    if version != GRID_VERSION:
        raise DataFormatError(path, f"unsupported version {version}", offset=4)
    try:
        grid = VoxelGrid(resolution)
    except ValueError as error:
        raise DataFormatError(path, str(error), offset=8)
    expected = 12 + 8 * grid.cell_count
    if len(data) != expected:
        raise DataFormatError(path, f"expected {expected} bytes for R={resolution}, got {len(data)}", offset=min(len(data), expected))
    density = np.frombuffer(data, dtype="<f4", count=grid.cell_count, offset=12).astype(np.float64)
    logits = np.frombuffer(data, dtype="<f4", count=grid.cell_count, offset=12 + 4 * grid.cell_count).astype(np.float64)
    try:
        return DensityField(grid, density, logits, "external-file")
    except ValueError as error:
        raise DataFormatError(path, str(error), offset=12)


# ------------------------
# Encoder weights
# ------------------------
def save_encoder(path: str, encoder: SurfaceEncoder) -> None:
    header = [ENCODER_VERSION, encoder.dim, len(encoder.layers)]
    for layer in encoder.layers:
        header += list(layer.shape)
    with open(path, "wb") as handle:
        handle.write(ENCODER_MAGIC)
        handle.write(np.array(header, dtype="<u4").tobytes())
        for layer in encoder.layers:
            handle.write(np.ascontiguousarray(layer, dtype="<f4").tobytes())
    logger.info(f"Wrote encoder weights (D={encoder.dim}) to {path}")


def load_encoder(path: str, neighbors: int = ENCODER_NEIGHBORS) -> SurfaceEncoder:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != ENCODER_MAGIC:
        raise DataFormatError(path, "missing 'PUGC' magic", offset=0)
    if len(data) < 16:
        raise DataFormatError(path, "truncated header", offset=len(data))
    version, dim, count = (int(value) for value in np.frombuffer(data, dtype="<u4", count=3, offset=4))
    if version != ENCODER_VERSION:
        raise DataFormatError(path, f"unsupported version {version}", offset=4)
    offset = 16
    if len(data) < offset + 8 * count:
        raise DataFormatError(path, "truncated layer table", offset=len(data))
    shapes = np.frombuffer(data, dtype="<u4", count=2 * count, offset=offset).reshape(count, 2)
    offset += 8 * count

    layers = []
    for rows, cols in shapes:
        size = int(rows) * int(cols)
        if len(data) < offset + 4 * size:
            raise DataFormatError(path, "truncated layer data", offset=len(data))
        layers.append(np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(int(rows), int(cols)).astype(np.float64))
        offset += 4 * size
    if offset != len(data):
        raise DataFormatError(path, f"{len(data) - offset} trailing bytes", offset=offset)
    try:
        encoder = SurfaceEncoder(neighbors=neighbors, layers=layers)
    except ValueError as error:
        raise DataFormatError(path, str(error), offset=16)
    if encoder.dim != dim:
        raise DataFormatError(path, f"header says D={dim}, layers give {encoder.dim}", offset=8)
    return encoder
