"""End-to-end reconstruction: segments -> polygons -> rectangles -> roofs -> meshes."""
from __future__ import annotations

import math
import multiprocessing
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geodata_io as gio
from .config import Config, validate_config
from .errors import (DegeneratePolygon, InputTooLarge, InsufficientData, ReconstructionError,
                     StageError)
from .lines import detect_image_line_segments
from .mesh import (TriMesh, dsm_to_mesh, irregular_decision, iou_rects_vs_mask, merge_meshes,
                   model_to_mesh)
from .polygon import (estimate_main_orientations, regularize_with_image_lines, simplify_dp,
                      snap_and_merge_lines, trace_boundary)
from .rectangles import RECT_CSV_HEADER, OrientedRect, decompose_segment
from .refinement import refine_orientations
from .roofs import SearchGrid, estimate_base_height, fit_roof, model_heights
from .segmentation import BuildingSegment, connected_components, fallback_segmentation

STAGES = ("segments", "polygon", "rectangles", "refined", "roof", "mesh")


@dataclass
class SegmentResult:
    segment: BuildingSegment
    ring: np.ndarray
    orientations: list  # (angle_rad, strength)
    rects: list  # OrientedRect from decomposition
    refined: list | None  # after road snapping, None without roads
    models: list  # RoofModel
    z_ground: float
    iou: float
    decision: str
    mesh: TriMesh
    notes: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


@dataclass
class PipelineReport:
    summary: dict
    timings: dict  # stage -> seconds (not persisted, varies between runs)
    results: list
    files: list


# --------------------------------------------------------------------------
# segmentation
# --------------------------------------------------------------------------

def building_mask(scene: gio.Scene, config: Config) -> np.ndarray:
    if scene.classmap is not None:
        return scene.classmap == 1
    ground = config.fallback_ground_m
    if ground is None:
        finite = scene.dsm[np.isfinite(scene.dsm)]
        ground = float(np.percentile(finite, 5)) if finite.size else 0.0
    return fallback_segmentation(scene.dsm, ground, config.fallback_min_height_m)


def scene_gsd(scene: gio.Scene, config: Config) -> float:
    return scene.geo.gsd if scene.geo is not None else config.gsd_m


# --------------------------------------------------------------------------
# per-segment work
# --------------------------------------------------------------------------

def extract_polygon(segment: BuildingSegment, ortho, config: Config, notes=None):
    """Boundary trace, simplification, orientation snapping and image-line alignment."""
    notes = notes if notes is not None else []
    ring = simplify_dp(trace_boundary(segment), config.eps_dp)
    orients = estimate_main_orientations(ring, config.T_l, config.orientation_bin_deg)
    try:
        ring = snap_and_merge_lines(ring, orients, config.T_l, config.jog_tol)
    except DegeneratePolygon as exc:
        notes.append(f"snapping skipped: {exc}")
    if config.use_image_lines:
        r0, c0, r1, c1 = segment.bbox
        pad = int(math.ceil(config.line_dist_tol)) + 2
        lines = detect_image_line_segments(ortho, (r0 - pad, c0 - pad, r1 + pad, c1 + pad),
                                           config.line_min_length)
        try:
            ring = regularize_with_image_lines(ring, lines, config.line_dist_tol,
                                               config.line_angle_tol_deg)
        except DegeneratePolygon as exc:
            notes.append(f"image-line alignment skipped: {exc}")
    return ring


def _shift_rect(rect: OrientedRect, dr, dc) -> OrientedRect:
    return OrientedRect(rect.cx - dc, rect.cy - dr, rect.length, rect.width, rect.theta)


def _search_grid(config: Config) -> SearchGrid:
    return SearchGrid(config.z_step, tuple(config.hipl_fracs), tuple(config.hipw_fracs),
                      min_cells=config.min_fit_cells, kind_tol_m=config.kind_tol_m)


def process_segment(segment: BuildingSegment, scene: gio.Scene, config: Config) -> SegmentResult:
    """Run every per-building stage; failures carry the stage name and segment id."""
    notes, timings = [], {}
    gsd = scene_gsd(scene, config)
    stage = "polygon"
    try:
        t = time.perf_counter()
        ring = extract_polygon(segment, scene.ortho, config, notes)
        orients = estimate_main_orientations(ring, config.T_l, config.orientation_bin_deg)
        timings["polygon"] = time.perf_counter() - t

        stage = "rectangles"
        t = time.perf_counter()
        decomp = decompose_segment(segment, orients.dominant_angle, scene.dsm, scene.ortho,
                                   config.T_d, config.T_h1, config.T_h2, config.grad_threshold,
                                   config.pyramid_levels, config.coverage, config.min_rect_area,
                                   config.edge_depth, config.merge_align_tol)
        rects = decomp.rects
        timings["rectangles"] = time.perf_counter() - t

        stage = "refined"
        refined = None
        if scene.roads is not None:
            t = time.perf_counter()
            refined = refine_orientations(rects, scene.roads, scene.geo, segment.mask,
                                          config.d_max_m, config.tol_deg, segment.offset)
            timings["refined"] = time.perf_counter() - t
        fit_rects = refined if refined is not None else rects

        stage = "roof"
        t = time.perf_counter()
        z_ground = estimate_base_height(segment, scene.dsm, config.base_ring_px,
                                        config.base_percentile)
        grid = _search_grid(config)
        models = []
        for rect in fit_rects:
            try:
                models.append(fit_roof(rect, scene.dsm, grid, segment.mask, gsd,
                                       mask_offset=segment.offset))
            except InsufficientData as exc:
                notes.append(f"rectangle skipped: {exc}")
        if models:
            z_ground = min(z_ground, min(m.params.z_eave for m in models) - config.min_wall_m)
        for m in models:
            m.z_ground = z_ground
        timings["roof"] = time.perf_counter() - t

        stage = "mesh"
        t = time.perf_counter()
        pad = 4
        patch, (pr, pc) = segment.padded_mask(pad)
        iou = iou_rects_vs_mask([_shift_rect(m.rect, pr, pc) for m in models], patch) if models else 0.0
        decision = irregular_decision(iou, segment.area_px, config.iou_thresh, config.area_thresh)
        if models and decision == "Regular":
            mesh = merge_meshes([model_to_mesh(m, scene.geo) for m in models])
        else:
            if not models:
                notes.append("no rectangle could be fitted; meshing the DSM directly")
                decision = "Irregular"
            z_dsm = min(z_ground, float(np.nanmin(scene.dsm[segment.pixels()])) - config.min_wall_m)
            mesh = dsm_to_mesh(scene.dsm, ring, z_dsm, scene.geo, simplify_to=config.max_faces)
            z_ground = z_dsm
        timings["mesh"] = time.perf_counter() - t
    except ReconstructionError as exc:
        raise StageError(stage, segment.id, exc) from exc
    orient_rows = list(zip(orients.angles, orients.strengths))
    return SegmentResult(segment, ring, orient_rows, rects, refined, models, z_ground, iou,
                         decision, mesh, notes, timings)


# worker-side state, inherited by forked processes
_WORKER = {}


def _init_worker(scene, config):
    _WORKER["scene"] = scene
    _WORKER["config"] = config


def _run_in_worker(segment):
    return process_segment(segment, _WORKER["scene"], _WORKER["config"])


def _map_segments(segments, scene, config):
    if config.workers <= 1 or len(segments) <= 1:
        return [process_segment(s, scene, config) for s in segments]
    methods = multiprocessing.get_all_start_methods()
    ctx = multiprocessing.get_context("fork" if "fork" in methods else None)
    with ProcessPoolExecutor(config.workers, mp_context=ctx, initializer=_init_worker,
                             initargs=(scene, config)) as pool:
        # map preserves input order, so results stay in segment-id order
        return list(pool.map(_run_in_worker, segments))


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------

def _ring_table(ring, geo):
    header = ["vertex", "x_px", "y_px"]
    rows = []
    if geo is not None:
        header += ["x_world", "y_world"]
    for i, (x, y) in enumerate(ring.tolist()):
        row = [i, x, y]
        if geo is not None:
            wx, wy = geo.pixel_to_world(x, y)
            row += [float(wx), float(wy)]
        rows.append(row)
    return gio.CsvTable(header, rows)


def _rect_table(rects):
    return gio.CsvTable(RECT_CSV_HEADER, [r.as_row(i) for i, r in enumerate(rects, start=1)])


def _fitted_grid(res: SegmentResult, geo, nodata):
    r0, c0, r1, c1 = res.segment.bbox
    for m in res.models:
        b = m.rect.bbox()
        r0, c0 = min(r0, b[0]), min(c0, b[1])
        r1, c1 = max(r1, b[2]), max(c1, b[3])
    values = np.full((r1 - r0, c1 - c0), np.nan)
    ys, xs = np.mgrid[r0:r1, c0:c1]
    for m in res.models:
        inside = m.rect.contains(xs, ys)
        h = model_heights(m, xs, ys)
        upd = inside & ~(values >= h)
        values[upd] = h[upd]
    return gio.grid_for_patch(values, r0, c0, geo, nodata)


def _roof_json(res: SegmentResult):
    return {
        "id": res.segment.id,
        "area_px": res.segment.area_px,
        "decision": res.decision,
        "iou": res.iou,
        "z_ground": res.z_ground,
        "roofs": [m.to_json(i) for i, m in enumerate(res.models, start=1)],
        "notes": res.notes,
    }


def persist_results(results, scene: gio.Scene, output_dir: Path):
    files = []
    sid = [r.segment.id for r in results]
    files += gio.persist_stage(output_dir, "segment",
                               [(r.segment.id, r.segment.mask) for r in results])
    files += gio.persist_stage(output_dir, "polygon",
                               [(i, _ring_table(r.ring, scene.geo)) for i, r in zip(sid, results)])
    files += gio.persist_stage(output_dir, "orientations", [
        (i, gio.CsvTable(["angle_deg", "strength_px"],
                         [[math.degrees(a), s] for a, s in r.orientations]))
        for i, r in zip(sid, results)])
    files += gio.persist_stage(output_dir, "rectangles",
                               [(i, _rect_table(r.rects)) for i, r in zip(sid, results)])
    if scene.roads is not None:
        files += gio.persist_stage(output_dir, "refined",
                                   [(i, _rect_table(r.refined)) for i, r in zip(sid, results)])
    files += gio.persist_stage(output_dir, "roof", [(i, _roof_json(r)) for i, r in zip(sid, results)])
    files += gio.persist_stage(output_dir, "roofdsm", [
        (i, _fitted_grid(r, scene.geo, scene.nodata)) for i, r in zip(sid, results) if r.models])
    files += gio.persist_stage(output_dir, "mesh", [(i, r.mesh) for i, r in zip(sid, results)])
    return files


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def _progress_printer(stream):
    def emit(line):
        print(line, file=stream, flush=True)
    return emit


def run_pipeline(scene_or_paths, config=None, output_dir="out", progress=None) -> PipelineReport:
    """Reconstruct every building of a scene and write all stage artifacts.

    ``scene_or_paths`` is a :class:`~lod2recon.geodata_io.Scene` or a mapping of
    :func:`~lod2recon.geodata_io.load_scene` keyword arguments.  ``config`` may
    be a :class:`Config` or a mapping validated with :func:`validate_config`.
    ``progress`` receives one text line per stage and segment.
    """
    if not isinstance(config, Config):
        config = validate_config(config)
    emit = progress or (lambda line: None)
    timings = {}
    t = time.perf_counter()
    scene = scene_or_paths if isinstance(scene_or_paths, gio.Scene) else gio.load_scene(**scene_or_paths)
    timings["load"] = time.perf_counter() - t
    h, w = scene.shape
    if h > config.max_input_px or w > config.max_input_px:
        raise InputTooLarge(f"scene is {w}x{h} px; the limit is "
                            f"{config.max_input_px}x{config.max_input_px}")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    t = time.perf_counter()
    segments = connected_components(building_mask(scene, config), config.min_area)
    timings["segments"] = time.perf_counter() - t
    emit(f"segments: {len(segments)} building segment(s)")

    results = _map_segments(segments, scene, config)
    for res in results:
        for stage in STAGES[1:]:
            if stage in res.timings:
                emit(f"{stage}: segment {res.segment.id} done")
                timings[stage] = timings.get(stage, 0.0) + res.timings[stage]

    t = time.perf_counter()
    files = persist_results(results, scene, output_dir)
    scene_mesh = merge_meshes([r.mesh for r in results])
    files += [output_dir / "scene.obj"]
    gio.write_obj(output_dir / "scene.obj", scene_mesh.vertices, scene_mesh.faces)
    summary = {
        "buildings": len(results),
        "regular": sum(r.decision == "Regular" for r in results),
        "irregular": sum(r.decision == "Irregular" for r in results),
        "total_faces": int(sum(r.mesh.face_count for r in results)),
        "roads_used": scene.roads is not None,
        "georeferenced": scene.geo is not None,
        "segments": [{
            "id": r.segment.id, "decision": r.decision, "faces": r.mesh.face_count,
            "rectangles": len(r.rects), "kinds": [m.kind for m in r.models],
        } for r in results],
        # the worker count must not change the written files
        "config": {k: v for k, v in config.to_dict().items() if k != "workers"},
    }
    gio.write_json(output_dir / "summary.json", summary)
    files.append(output_dir / "summary.json")
    timings["write"] = time.perf_counter() - t
    emit("done: " + ", ".join(f"{k} {v:.2f}s" for k, v in timings.items()))
    return PipelineReport(summary, timings, results, files)


def stderr_progress():
    return _progress_printer(sys.stderr)
