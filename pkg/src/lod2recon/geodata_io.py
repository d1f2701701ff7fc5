"""Scene loading, georeferencing and the on-disk formats used for every stage.

Formats are deliberately plain so files can be diffed byte for byte:

* orthophoto: binary PPM (P6, maxval 255)
* classification map / masks: binary PGM (P5, maxval 255)
* DSM and fitted-model heights: ESRI ASCII Grid
* georeference: 6-line world file (A, D, B, E, C, F)
* roads: one WKT ``LINESTRING`` per line, world coordinates
* meshes: Wavefront OBJ with ``v`` and ``f`` records only
* tables: CSV with a header row; roof parameters: JSON
"""
from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    IoFailure,
    MalformedFile,
    MissingGeoref,
    SingularTransform,
)

FLOAT_FMT = "{:.6f}"


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel -> world mapping in world-file parameter order.

    ``x = pixel_size_x * col + rot_x * row + origin_x``
    ``y = rot_y * col + pixel_size_y * row + origin_y``

    Pixel ``(0, 0)`` is the centre of the top-left cell.
    """

    pixel_size_x: float
    rot_y: float
    rot_x: float
    pixel_size_y: float
    origin_x: float
    origin_y: float

    @property
    def linear(self) -> np.ndarray:
        return np.array([[self.pixel_size_x, self.rot_x], [self.rot_y, self.pixel_size_y]])

    @property
    def determinant(self) -> float:
        return self.pixel_size_x * self.pixel_size_y - self.rot_x * self.rot_y

    @property
    def gsd(self) -> float:
        """Ground sampling distance (m/px), from the area scale of the linear part."""
        return float(np.sqrt(abs(self.determinant)))

    def pixel_to_world(self, col, row):
        col = np.asarray(col, dtype=float)
        row = np.asarray(row, dtype=float)
        x = self.pixel_size_x * col + self.rot_x * row + self.origin_x
        y = self.rot_y * col + self.pixel_size_y * row + self.origin_y
        return x, y

    def world_to_pixel(self, x, y):
        det = self.determinant
        if det == 0 or not np.isfinite(det):
            raise SingularTransform(f"world transform is not invertible (det={det})")
        dx = np.asarray(x, dtype=float) - self.origin_x
        dy = np.asarray(y, dtype=float) - self.origin_y
        col = (self.pixel_size_y * dx - self.rot_x * dy) / det
        row = (-self.rot_y * dx + self.pixel_size_x * dy) / det
        return col, row

    def direction_to_pixel(self, dx, dy):
        """Map a world-space direction vector into pixel space (no translation)."""
        det = self.determinant
        if det == 0:
            raise SingularTransform("world transform is not invertible")
        return ((self.pixel_size_y * dx - self.rot_x * dy) / det,
                (-self.rot_y * dx + self.pixel_size_x * dy) / det)

    def as_tuple(self):
        return (self.pixel_size_x, self.rot_y, self.rot_x, self.pixel_size_y,
                self.origin_x, self.origin_y)


@dataclass
class RoadNetwork:
    polylines: list  # list of (n, 2) float arrays in world coordinates

    def __post_init__(self):
        checked = []
        for i, line in enumerate(self.polylines):
            pts = np.asarray(line, dtype=float).reshape(-1, 2)
            if len(pts) < 2:
                raise ValueError(f"road polyline {i} has fewer than 2 vertices")
            if np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
                raise ValueError(f"road polyline {i} repeats a vertex")
            checked.append(pts)
        self.polylines = checked


@dataclass
class Scene:
    """Co-registered inputs. ``dsm`` holds NaN where the file had nodata."""

    ortho: np.ndarray  # (H, W, 3) uint8
    dsm: np.ndarray  # (H, W) float64
    classmap: np.ndarray | None = None  # (H, W) uint8, building == 1
    geo: GeoTransform | None = None
    roads: RoadNetwork | None = None
    nodata: float = -9999.0

    def __post_init__(self):
        if self.ortho.ndim != 3 or self.ortho.shape[2] != 3:
            raise DimensionMismatch(f"orthophoto must be (H, W, 3), got {self.ortho.shape}")
        shape = self.ortho.shape[:2]
        if self.dsm.shape != shape:
            raise DimensionMismatch(
                f"DSM is {self.dsm.shape[1]}x{self.dsm.shape[0]} but orthophoto is "
                f"{shape[1]}x{shape[0]}")
        if self.classmap is not None and self.classmap.shape != shape:
            raise DimensionMismatch(
                f"classification map is {self.classmap.shape[1]}x{self.classmap.shape[0]} "
                f"but orthophoto is {shape[1]}x{shape[0]}")
        if self.roads is not None and self.geo is None:
            raise MissingGeoref("road vectors need a world file to be projected into pixels")

    @property
    def shape(self):
        return self.ortho.shape[:2]

    @property
    def width(self):
        return self.ortho.shape[1]

    @property
    def height(self):
        return self.ortho.shape[0]


# --------------------------------------------------------------------------
# PNM
# --------------------------------------------------------------------------

_WS = b" \t\r\n\v\f"


def _pnm_header(data: bytes, magic: bytes, path):
    if data[:2] != magic:
        raise MalformedFile(f"expected magic {magic.decode()}", path, 0)
    pos = 2
    values = []
    while len(values) < 3:
        if pos >= len(data):
            raise MalformedFile("truncated header", path, pos)
        ch = data[pos:pos + 1]
        if ch in (b"",):
            raise MalformedFile("truncated header", path, pos)
        if ch[0] in _WS:
            pos += 1
            continue
        if ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise MalformedFile("unterminated comment", path, pos)
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WS and data[pos:pos + 1] != b"#":
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise MalformedFile(f"bad header token {token!r}", path, start)
        values.append(int(token))
    if pos >= len(data) or data[pos] not in _WS:
        raise MalformedFile("missing whitespace after maxval", path, pos)
    width, height, maxval = values
    if width < 1 or height < 1:
        raise MalformedFile("image dimensions must be positive", path, 2)
    if maxval != 255:
        raise MalformedFile(f"only 8-bit images supported (maxval {maxval})", path, pos)
    return width, height, pos + 1


def read_ppm(path) -> np.ndarray:
    data = _read_bytes(path)
    width, height, offset = _pnm_header(data, b"P6", path)
    need = width * height * 3
    if len(data) - offset < need:
        raise MalformedFile(f"expected {need} pixel bytes, found {len(data) - offset}",
                            path, len(data))
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=offset).reshape(height, width, 3).copy()


def read_pgm(path) -> np.ndarray:
    data = _read_bytes(path)
    width, height, offset = _pnm_header(data, b"P5", path)
    need = width * height
    if len(data) - offset < need:
        raise MalformedFile(f"expected {need} pixel bytes, found {len(data) - offset}",
                            path, len(data))
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=offset).reshape(height, width).copy()


def ppm_bytes(rgb: np.ndarray) -> bytes:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def pgm_bytes(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.dtype == bool:
        gray = gray.astype(np.uint8) * 255
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode() + gray.tobytes()


def write_ppm(path, rgb):
    _write_bytes(path, ppm_bytes(rgb))


def write_pgm(path, gray):
    _write_bytes(path, pgm_bytes(gray))


# --------------------------------------------------------------------------
# ESRI ASCII grid
# --------------------------------------------------------------------------

_ASC_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
             "cellsize", "nodata_value"}


@dataclass
class AscGrid:
    """Height grid plus the header needed to write it as an ASCII grid."""

    values: np.ndarray  # NaN = nodata
    xll: float = 0.0
    yll: float = 0.0
    cellsize: float = 1.0
    nodata: float = -9999.0


def read_asc(path) -> AscGrid:
    data = _read_bytes(path)
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedFile("ASCII grid contains non-ASCII bytes", path, exc.start) from None
    header = {}
    pos = 0
    while True:
        m = re.match(r"[ \t\r\n]*([A-Za-z_]+)[ \t]+(\S+)[ \t]*\r?\n", text[pos:])
        if not m or m.group(1).lower() not in _ASC_KEYS:
            break
        key = m.group(1).lower()
        try:
            header[key] = float(m.group(2))
        except ValueError:
            raise MalformedFile(f"bad value for {key}", path, pos + m.start(2)) from None
        pos += m.end()
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise MalformedFile(f"missing header keyword {key}", path, pos)
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols < 1 or nrows < 1 or ncols != header["ncols"] or nrows != header["nrows"]:
        raise MalformedFile("ncols/nrows must be positive integers", path, 0)
    tokens = text[pos:].split()
    if len(tokens) != ncols * nrows:
        raise MalformedFile(f"expected {ncols * nrows} values, found {len(tokens)}", path, len(data))
    try:
        values = np.array(tokens, dtype=np.float64).reshape(nrows, ncols)
    except ValueError:
        for tok in tokens:
            try:
                float(tok)
            except ValueError:
                raise MalformedFile(f"non-numeric value {tok!r}", path, text.find(tok, pos)) from None
        raise
    nodata = header.get("nodata_value", -9999.0)
    values[values == nodata] = np.nan
    if not np.all(np.isfinite(values[~np.isnan(values)])):
        raise MalformedFile("non-finite height value", path, pos)
    cs = header["cellsize"]
    if "xllcenter" in header:
        xll = header["xllcenter"] - cs / 2
    else:
        xll = header.get("xllcorner", 0.0)
    if "yllcenter" in header:
        yll = header["yllcenter"] - cs / 2
    else:
        yll = header.get("yllcorner", 0.0)
    return AscGrid(values, xll, yll, cs, nodata)


def asc_bytes(grid: AscGrid) -> bytes:
    values = np.asarray(grid.values, dtype=np.float64)
    nrows, ncols = values.shape
    nodata = FLOAT_FMT.format(grid.nodata)
    lines = [
        f"ncols {ncols}",
        f"nrows {nrows}",
        f"xllcorner {FLOAT_FMT.format(grid.xll)}",
        f"yllcorner {FLOAT_FMT.format(grid.yll)}",
        f"cellsize {FLOAT_FMT.format(grid.cellsize)}",
        f"NODATA_value {nodata}",
    ]
    for row in values:
        lines.append(" ".join(nodata if np.isnan(v) else FLOAT_FMT.format(v) for v in row))
    return ("\n".join(lines) + "\n").encode("ascii")


def write_asc(path, grid: AscGrid):
    _write_bytes(path, asc_bytes(grid))


def grid_for_patch(values, row0, col0, geo: GeoTransform | None, nodata=-9999.0) -> AscGrid:
    """Wrap a raster patch whose top-left cell is scene pixel (row0, col0)."""
    nrows = values.shape[0]
    if geo is not None and geo.rot_x == 0 and geo.rot_y == 0 and \
            abs(abs(geo.pixel_size_x) - abs(geo.pixel_size_y)) < 1e-12:
        cs = abs(geo.pixel_size_x)
        x0, y0 = geo.pixel_to_world(col0 - 0.5, row0 + nrows - 0.5)
        return AscGrid(values, float(x0), float(y0), cs, nodata)
    # pixel units, y axis pointing up
    return AscGrid(values, col0 - 0.5, -(row0 + nrows - 0.5), 1.0, nodata)


# --------------------------------------------------------------------------
# world file and roads
# --------------------------------------------------------------------------

def read_worldfile(path) -> GeoTransform:
    data = _read_bytes(path)
    lines = [ln for ln in data.decode("ascii", errors="replace").splitlines() if ln.strip()]
    if len(lines) != 6:
        raise MalformedFile(f"world file must have 6 lines, found {len(lines)}", path, 0)
    vals = []
    offset = 0
    text = data.decode("ascii", errors="replace")
    for ln in lines:
        offset = text.find(ln, offset)
        try:
            vals.append(float(ln.strip()))
        except ValueError:
            raise MalformedFile(f"bad world file value {ln.strip()!r}", path, offset) from None
    geo = GeoTransform(*vals)
    if geo.determinant == 0:
        raise SingularTransform("world file describes a singular transform")
    return geo


def worldfile_bytes(geo: GeoTransform) -> bytes:
    return ("\n".join(repr(float(v)) for v in geo.as_tuple()) + "\n").encode("ascii")


def write_worldfile(path, geo: GeoTransform):
    _write_bytes(path, worldfile_bytes(geo))


_LINESTRING = re.compile(r"^\s*LINESTRING\s*\((.*)\)\s*$", re.IGNORECASE)


def read_roads(path) -> RoadNetwork:
    data = _read_bytes(path)
    text = data.decode("ascii", errors="replace")
    polylines = []
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            m = _LINESTRING.match(stripped)
            if not m:
                raise MalformedFile("expected WKT LINESTRING", path, offset)
            try:
                pts = [tuple(float(v) for v in pair.split()) for pair in m.group(1).split(",")]
            except ValueError:
                raise MalformedFile("bad coordinate in LINESTRING", path, offset) from None
            if any(len(p) != 2 for p in pts):
                raise MalformedFile("LINESTRING vertices must be 2D", path, offset)
            try:
                polylines.append(RoadNetwork([pts]).polylines[0])
            except ValueError as exc:
                raise MalformedFile(str(exc), path, offset) from None
        offset += len(line.encode("ascii", errors="replace"))
    return RoadNetwork(polylines)


def roads_bytes(roads: RoadNetwork) -> bytes:
    out = []
    for pts in roads.polylines:
        out.append("LINESTRING (" + ", ".join(f"{x!r} {y!r}" for x, y in pts.tolist()) + ")")
    return ("\n".join(out) + "\n").encode("ascii")


def write_roads(path, roads: RoadNetwork):
    _write_bytes(path, roads_bytes(roads))


# --------------------------------------------------------------------------
# scene
# --------------------------------------------------------------------------

def normalize_classmap(raw: np.ndarray, path=None) -> np.ndarray:
    """Map building labels {1, 255} to 1; any other nonzero label is an error."""
    bad = (raw != 0) & (raw != 1) & (raw != 255)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise MalformedFile(f"classification value {int(raw.flat[idx])} is neither 0, 1 nor 255",
                            path, None if path is None else _pgm_pixel_offset(path, idx))
    return (raw != 0).astype(np.uint8)


def _pgm_pixel_offset(path, index):
    data = _read_bytes(path)
    _, _, offset = _pnm_header(data, b"P5", path)
    return offset + index


def load_scene(ortho_path, dsm_path, classmap_path=None, roads_path=None,
               worldfile_path=None) -> Scene:
    if roads_path is not None and worldfile_path is None:
        raise MissingGeoref("roads given without a world file")
    ortho = read_ppm(ortho_path)
    grid = read_asc(dsm_path)
    dsm = grid.values
    if dsm.shape != ortho.shape[:2]:
        raise DimensionMismatch(
            f"DSM is {dsm.shape[1]}x{dsm.shape[0]} but orthophoto is "
            f"{ortho.shape[1]}x{ortho.shape[0]}; they must have the same rows and columns")
    classmap = None
    if classmap_path is not None:
        raw = read_pgm(classmap_path)
        if raw.shape != dsm.shape:
            raise DimensionMismatch(
                f"classification map is {raw.shape[1]}x{raw.shape[0]} but orthophoto is "
                f"{ortho.shape[1]}x{ortho.shape[0]}")
        classmap = normalize_classmap(raw, classmap_path)
    geo = read_worldfile(worldfile_path) if worldfile_path is not None else None
    roads = read_roads(roads_path) if roads_path is not None else None
    return Scene(ortho=ortho, dsm=dsm, classmap=classmap, geo=geo, roads=roads, nodata=grid.nodata)


def save_scene(scene: Scene, directory, stem="scene") -> dict:
    """Write a scene in the loader formats; returns the keyword paths for load_scene."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"ortho_path": directory / f"{stem}_ortho.ppm",
             "dsm_path": directory / f"{stem}_dsm.asc"}
    write_ppm(paths["ortho_path"], scene.ortho)
    write_asc(paths["dsm_path"], grid_for_patch(scene.dsm, 0, 0, scene.geo, scene.nodata))
    if scene.classmap is not None:
        paths["classmap_path"] = directory / f"{stem}_class.pgm"
        write_pgm(paths["classmap_path"], np.where(scene.classmap > 0, 255, 0).astype(np.uint8))
    if scene.geo is not None:
        paths["worldfile_path"] = directory / f"{stem}_ortho.wld"
        write_worldfile(paths["worldfile_path"], scene.geo)
    if scene.roads is not None:
        paths["roads_path"] = directory / f"{stem}_roads.wkt"
        write_roads(paths["roads_path"], scene.roads)
    return paths


# --------------------------------------------------------------------------
# OBJ, CSV, JSON
# --------------------------------------------------------------------------

def obj_bytes(vertices, faces) -> bytes:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    out = [f"v {FLOAT_FMT.format(x)} {FLOAT_FMT.format(y)} {FLOAT_FMT.format(z)}"
           for x, y, z in vertices.tolist()]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces.tolist()]
    return ("\n".join(out) + "\n").encode("ascii")


def write_obj(path, vertices, faces):
    _write_bytes(path, obj_bytes(vertices, faces))


def read_obj(path):
    """Read ``v``/``f`` records; returns (vertices (n, 3), faces (m, 3) zero-based)."""
    verts, faces = [], []
    offset = 0
    data = _read_bytes(path)
    for line in data.decode("ascii").splitlines(keepends=True):
        parts = line.split()
        if parts and parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts and parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(idx) != 3:
                raise MalformedFile("only triangular faces are supported", path, offset)
            faces.append(idx)
        offset += len(line)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


@dataclass
class CsvTable:
    header: Sequence[str]
    rows: list = field(default_factory=list)

    def to_bytes(self) -> bytes:
        lines = [",".join(self.header)]
        for row in self.rows:
            lines.append(",".join(_csv_cell(v) for v in row))
        return ("\n".join(lines) + "\n").encode("ascii")


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode("ascii")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round(float(obj), 9)
    return obj


# --------------------------------------------------------------------------
# stage persistence
# --------------------------------------------------------------------------

def serialize(payload):
    """Return ``(extension, bytes)`` for any artifact the pipeline persists."""
    if isinstance(payload, CsvTable):
        return "csv", payload.to_bytes()
    if isinstance(payload, AscGrid):
        return "asc", asc_bytes(payload)
    if isinstance(payload, dict):
        return "json", json_bytes(payload)
    if hasattr(payload, "vertices") and hasattr(payload, "faces"):
        return "obj", obj_bytes(payload.vertices, payload.faces)
    if isinstance(payload, np.ndarray) and payload.ndim == 2:
        return "pgm", pgm_bytes(payload)
    if isinstance(payload, np.ndarray) and payload.ndim == 3:
        return "ppm", ppm_bytes(payload)
    raise TypeError(f"don't know how to persist {type(payload).__name__}")


def stage_filename(stage_name, segment_id, ext):
    if isinstance(segment_id, (int, np.integer)):
        return f"{stage_name}_{int(segment_id):06d}.{ext}"
    return f"{stage_name}_{segment_id}.{ext}"


def persist_stage(output_dir, stage_name: str, artifacts: Iterable) -> list[Path]:
    """Write ``(segment_id, payload)`` pairs as ``<stage>_<segment_id>.<ext>``.

    Payload type picks the format: masks -> PGM, :class:`CsvTable` -> CSV,
    dicts -> JSON, meshes -> OBJ, :class:`AscGrid` -> ASC.
    """
    output_dir = Path(output_dir)
    written = []
    for segment_id, payload in artifacts:
        ext, blob = serialize(payload)
        path = output_dir / stage_filename(stage_name, segment_id, ext)
        _write_bytes(path, blob)
        written.append(path)
    return written


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, blob: bytes):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_json(path, obj):
    _write_bytes(path, json_bytes(obj))
