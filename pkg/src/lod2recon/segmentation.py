"""Per-building segments from a classification map or a DSM threshold."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class BuildingSegment:
    id: int
    mask: np.ndarray  # bool patch covering bbox
    offset: tuple  # (row0, col0) of the patch in the scene
    area_px: int

    @property
    def bbox(self):
        """(row0, col0, row1, col1), end-exclusive."""
        r0, c0 = self.offset
        return (r0, c0, r0 + self.mask.shape[0], c0 + self.mask.shape[1])

    def pixels(self):
        """Scene (row, col) indices of the set pixels."""
        rr, cc = np.nonzero(self.mask)
        return rr + self.offset[0], cc + self.offset[1]

    def full_mask(self, shape):
        out = np.zeros(shape, dtype=bool)
        r0, c0, r1, c1 = self.bbox
        out[r0:r1, c0:c1] = self.mask
        return out

    def padded_mask(self, pad):
        """Mask patch grown by ``pad`` empty pixels; returns (mask, (row0, col0))."""
        m = np.pad(self.mask, pad)
        return m, (self.offset[0] - pad, self.offset[1] - pad)


def label_components(mask: np.ndarray, connectivity: int = 8):
    """Label connected components; labels follow the raster order of each first pixel."""
    structure = EIGHT if connectivity == 8 else FOUR
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    if n == 0:
        return labels, 0
    values, first = np.unique(labels.ravel(), return_index=True)
    first, values = first[values > 0], values[values > 0]
    remap = np.zeros(n + 1, dtype=labels.dtype)
    remap[values[np.argsort(first, kind="stable")]] = np.arange(1, n + 1)
    return remap[labels], n


def connected_components(binary_mask: np.ndarray, min_area: int = 50) -> list[BuildingSegment]:
    """Split a building mask into 8-connected segments.

    Segments smaller than ``min_area`` pixels are dropped; the survivors are
    numbered 1, 2, ... in the raster order of their first pixel.
    """
    labels, n = label_components(binary_mask, 8)
    if n == 0:
        return []
    segments = []
    slices = ndimage.find_objects(labels)
    next_id = 1
    for lab, sl in enumerate(slices, start=1):
        patch = labels[sl] == lab
        area = int(patch.sum())
        if area < min_area:
            continue
        segments.append(BuildingSegment(next_id, patch, (sl[0].start, sl[1].start), area))
        next_id += 1
    return segments


def fallback_segmentation(dsm: np.ndarray, ground_height_m: float,
                          min_height_m: float = 2.0) -> np.ndarray:
    """Threshold the DSM above a flat ground level, then a 3x3 opening."""
    dsm = np.asarray(dsm, dtype=float)
    raised = np.zeros(dsm.shape, dtype=bool)
    finite = np.isfinite(dsm)
    raised[finite] = dsm[finite] - ground_height_m > min_height_m
    return ndimage.binary_opening(raised, structure=EIGHT)
