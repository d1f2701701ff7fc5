"""Footprint (2D) and column-voxel (3D) intersection-over-union scores."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptyReference
from .geodata_io import CsvTable
from .roofs import model_heights


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise DimensionMismatch(f"{what}: prediction is {a.shape}, reference is {b.shape}")


def iou2(pred_mask, ref_mask) -> float:
    """Pixel-count IoU of two footprint masks."""
    pred = np.asarray(pred_mask, dtype=bool)
    ref = np.asarray(ref_mask, dtype=bool)
    _same_shape(pred, ref, "footprint masks differ in size")
    if not ref.any():
        raise EmptyReference("reference footprint is empty")
    return int((pred & ref).sum()) / int((pred | ref).sum())


def column_voxels(heights, z_ground, voxel_h=0.5) -> np.ndarray:
    """Number of stacked voxels per cell whose centre lies at or below the surface.

    Voxel ``k`` spans ``[z_ground + k*voxel_h, z_ground + (k+1)*voxel_h]``;
    non-finite heights count as empty columns.
    """
    h = np.asarray(heights, dtype=float)
    rel = (h - np.asarray(z_ground, dtype=float)) / voxel_h
    counts = np.floor(rel + 0.5)
    counts = np.where(np.isfinite(counts), counts, 0.0)
    return np.maximum(counts, 0.0).astype(np.int64)


def iou3(pred_heights, ref_heights, z_ground, voxel_h=0.5) -> float:
    """Volumetric IoU of two height fields voxelised into vertical columns."""
    pred = np.asarray(pred_heights, dtype=float)
    ref = np.asarray(ref_heights, dtype=float)
    _same_shape(pred, ref, "height fields differ in size")
    cp = column_voxels(pred, z_ground, voxel_h)
    cr = column_voxels(ref, z_ground, voxel_h)
    if not cr.any():
        raise EmptyReference("reference height field has no occupied voxel")
    return int(np.minimum(cp, cr).sum()) / int(np.maximum(cp, cr).sum())


def render_models(models, shape):
    """Rasterize fitted roofs: (footprint mask, heights with NaN off-footprint).

    Where rectangles overlap the higher roof wins.
    """
    mask = np.zeros(shape, dtype=bool)
    heights = np.full(shape, np.nan)
    for m in models:
        r0, c0, r1, c1 = m.rect.bbox(shape)
        if r1 <= r0 or c1 <= c0:
            continue
        ys, xs = np.mgrid[r0:r1, c0:c1]
        inside = m.rect.contains(xs, ys)
        h = model_heights(m, xs, ys)
        cur = heights[r0:r1, c0:c1]
        upd = inside & ~(cur >= h)
        cur[upd] = h[upd]
        mask[r0:r1, c0:c1] |= inside
    return mask, heights


def metric_report(rows) -> CsvTable:
    """``rows`` of ``(scene, iou2, iou3)``."""
    return CsvTable(["scene", "IOU2", "IOU3"], [list(r) for r in rows])
