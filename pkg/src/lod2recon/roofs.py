"""Parametric roof shapes and their exhaustive least-squares fit to a DSM."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InsufficientData, InvalidParams
from .rectangles import OrientedRect
from .segmentation import EIGHT, BuildingSegment

# simplest first; also the tie-break order of the fit
KINDS = ("Flat", "Gable", "Pyramid", "Hip", "Mansard")
_RANK = {k: i for i, k in enumerate(KINDS)}


@dataclass
class RoofParams:
    z_ridge: float
    z_eave: float
    hipl: float = 0.0  # metres, ridge inset along the length
    hipw: float = 0.0  # metres, inset across the width (mansard)


@dataclass
class RoofModel:
    rect: OrientedRect  # scene pixels
    kind: str
    params: RoofParams
    rmse: float
    z_ground: float
    gsd_m: float = 0.5

    def to_json(self, building_id=None):
        r = self.rect
        out = {
            "cx": r.cx, "cy": r.cy, "len": r.length, "wid": r.width,
            "theta_deg": math.degrees(r.theta), "kind": self.kind,
            "z_ridge": self.params.z_ridge, "z_eave": self.params.z_eave,
            "hipl": self.params.hipl, "hipw": self.params.hipw,
            "rmse": self.rmse, "z_ground": self.z_ground, "gsd_m": self.gsd_m,
        }
        if building_id is not None:
            out["id"] = building_id
        return out


def _ramp(t, inset):
    """``t / inset`` with a zero inset meaning no slope from that side."""
    if inset <= 0:
        return np.full(np.shape(t), np.inf)
    with np.errstate(over="ignore"):  # a tiny inset is a near-vertical slope
        return t / inset


def roof_shape(kind, lx, ly, length, width, hipl=0.0, hipw=0.0):
    """Unclamped slope fraction ``s`` at local coordinates (all in one unit)."""
    lx = np.asarray(lx, dtype=float)
    ly = np.asarray(ly, dtype=float)
    if kind == "Flat":
        return np.zeros(np.broadcast(lx, ly).shape)
    across = np.minimum(_ramp(ly, width / 2), _ramp(width - ly, width / 2))
    if kind == "Gable":
        return across
    if kind == "Pyramid":
        return np.minimum(across, np.minimum(_ramp(lx, length / 2), _ramp(length - lx, length / 2)))
    if kind == "Hip":
        return np.minimum(across, np.minimum(_ramp(lx, hipl), _ramp(length - lx, hipl)))
    if kind == "Mansard":
        s = np.minimum(_ramp(lx, hipl), _ramp(length - lx, hipl))
        s = np.minimum(s, np.minimum(_ramp(ly, hipw), _ramp(width - ly, hipw)))
        return np.minimum(s, 1.0)
    raise InvalidParams(f"unknown roof kind {kind!r}")


def validate_params(kind, params: RoofParams, length_m, width_m, tol=1e-9):
    if kind not in _RANK:
        raise InvalidParams(f"unknown roof kind {kind!r}")
    vals = (params.z_ridge, params.z_eave, params.hipl, params.hipw)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidParams("roof parameters must be finite")
    if params.z_ridge < params.z_eave:
        raise InvalidParams(f"z_ridge {params.z_ridge} below z_eave {params.z_eave}")
    if not -tol <= params.hipl <= length_m / 2 + tol:
        raise InvalidParams(f"hipl {params.hipl} outside [0, {length_m / 2}]")
    if not -tol <= params.hipw <= width_m / 2 + tol:
        raise InvalidParams(f"hipw {params.hipw} outside [0, {width_m / 2}]")
    if kind == "Flat" and params.z_ridge != params.z_eave:
        raise InvalidParams("a flat roof needs z_ridge == z_eave")


def roof_heights_at(kind, params: RoofParams, rect: OrientedRect, xs, ys, gsd_m=0.5):
    """Roof height at scene pixel positions (points outside the rectangle are not masked)."""
    validate_params(kind, params, rect.length * gsd_m, rect.width * gsd_m)
    lx, ly = rect.local_coords(xs, ys)
    lx = np.clip(lx, 0.0, rect.length) * gsd_m
    ly = np.clip(ly, 0.0, rect.width) * gsd_m
    s = roof_shape(kind, lx, ly, rect.length * gsd_m, rect.width * gsd_m, params.hipl, params.hipw)
    return params.z_eave + (params.z_ridge - params.z_eave) * np.clip(s, 0.0, 1.0)


def synthesize_roof_height(kind, params: RoofParams, rect: OrientedRect, grid=None, gsd_m=0.5):
    """Roof heights over the rectangle's pixel bounding box; NaN outside the rectangle.

    ``grid`` is ``(row0, col0, row1, col1)``; by default the rectangle's own bounds.
    """
    r0, c0, r1, c1 = rect.bbox() if grid is None else grid
    ys, xs = np.mgrid[r0:r1, c0:c1]
    out = roof_heights_at(kind, params, rect, xs, ys, gsd_m)
    out[~rect.contains(xs, ys)] = np.nan
    return out


def model_heights(model: RoofModel, xs, ys):
    return roof_heights_at(model.kind, model.params, model.rect, xs, ys, model.gsd_m)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

@dataclass
class SearchGrid:
    z_step: float = 0.25
    hipl_fracs: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    hipw_fracs: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    margin_steps: int = 2
    min_cells: int = 16
    kind_tol_m: float = 0.005  # RMSE margin inside which the simpler roof kind is kept


def _mask_window(mask, offset, r0, c0, r1, c1):
    """Window ``[r0:r1, c0:c1]`` (scene rows/cols) of a mask patch placed at ``offset``."""
    out = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    mr0, mc0 = offset
    a0, b0 = max(r0, mr0), max(c0, mc0)
    a1, b1 = min(r1, mr0 + mask.shape[0]), min(c1, mc0 + mask.shape[1])
    if a1 > a0 and b1 > b0:
        out[a0 - r0:a1 - r0, b0 - c0:b1 - c0] = mask[a0 - mr0:a1 - mr0, b0 - mc0:b1 - mc0]
    return out


def footprint_samples(rect: OrientedRect, dsm, mask=None, mask_offset=(0, 0)):
    """Pixel centres inside ``rect`` (and ``mask``) with finite DSM: (xs, ys, heights).

    ``mask`` may be a patch whose top-left pixel sits at scene ``mask_offset``.
    """
    dsm = np.asarray(dsm, dtype=float)
    r0, c0, r1, c1 = rect.bbox(dsm.shape)
    if r1 <= r0 or c1 <= c0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    ys, xs = np.mgrid[r0:r1, c0:c1]
    patch = dsm[r0:r1, c0:c1]
    sel = rect.contains(xs, ys) & np.isfinite(patch)
    if mask is not None:
        sel &= _mask_window(np.asarray(mask, dtype=bool), mask_offset, r0, c0, r1, c1)
    return xs[sel].astype(float), ys[sel].astype(float), patch[sel]


def rmse_of(model: RoofModel, xs, ys, heights) -> float:
    pred = model_heights(model, xs, ys)
    return float(np.sqrt(np.mean((pred - heights) ** 2)))


def _z_levels(anchor, lo, hi, step, margin):
    """Heights ``anchor + k * step`` covering ``[lo, hi]`` plus ``margin`` steps either side."""
    k0 = math.floor((lo - anchor) / step) - margin
    k1 = math.ceil((hi - anchor) / step) + margin
    return anchor + np.arange(k0, k1 + 1) * step


def _shape_candidates(kind, length_m, width_m, grid: SearchGrid):
    if kind in ("Flat", "Gable", "Pyramid"):
        return [(0.0, 0.0)]
    hipls = sorted({f * length_m for f in grid.hipl_fracs})
    if kind == "Hip":
        return [(h, 0.0) for h in hipls]
    hipws = sorted({f * width_m for f in grid.hipw_fracs})
    return [(h, w) for h in hipls for w in hipws]


def fit_roof(rect: OrientedRect, dsm, search_grid: SearchGrid | None = None, mask=None,
             gsd_m: float = 0.5, z_ground: float | None = None, kinds=KINDS,
             tie_tol: float = 1e-9, mask_offset=(0, 0)) -> RoofModel:
    """Exhaustive search over roof kinds and parameters for the smallest RMSE.

    Heights are sampled at the pixel centres inside ``rect`` (restricted to
    ``mask`` when given).  Eave and ridge heights step by the grid step from the
    median sampled height and span all sampled heights; insets over fractions of the
    rectangle sides.  Candidates whose mean squared error is within ``tie_tol``
    of the best are resolved by lower ridge, lower eave and smaller insets.
    Across kinds the simplest one whose best RMSE lies within
    ``kind_tol_m`` of the overall best is returned.
    """
    grid = search_grid or SearchGrid()
    xs, ys, d = footprint_samples(rect, dsm, mask, mask_offset)
    n = d.size
    if n < grid.min_cells:
        raise InsufficientData(f"rectangle covers {n} valid DSM cells, need {grid.min_cells}")
    length_m, width_m = rect.length * gsd_m, rect.width * gsd_m
    lx, ly = rect.local_coords(xs, ys)
    lx = np.clip(lx, 0.0, rect.length) * gsd_m
    ly = np.clip(ly, 0.0, rect.width) * gsd_m
    med = float(np.median(d))
    dc = d - med  # centred heights keep the quadratic expansion well conditioned
    sum_d, sum_dd = dc.sum(), (dc * dc).sum()
    levels = _z_levels(med, float(d.min()), float(d.max()), grid.z_step, grid.margin_steps)
    eaves = levels[levels <= med + grid.z_step + 1e-9]
    ridges = levels[levels >= med - grid.z_step - 1e-9]
    ze = eaves[:, None] - med
    zr = ridges[None, :] - med

    candidates = []  # (mse, rank, z_ridge, z_eave, hipl, hipw, kind)
    for kind in kinds:
        for hipl, hipw in _shape_candidates(kind, length_m, width_m, grid):
            if kind == "Flat":
                e = levels - med
                mse = (sum_dd - 2 * e * sum_d + n * e * e) / n
                best_mse = mse.min()
                for j in np.nonzero(mse <= best_mse + tie_tol)[0]:
                    candidates.append((float(mse[j]), 0, levels[j], levels[j], 0.0, 0.0, kind))
                continue
            s = np.clip(roof_shape(kind, lx, ly, length_m, width_m, hipl, hipw), 0.0, 1.0)
            ss, sss, sds = s.sum(), (s * s).sum(), (s * dc).sum()
            r = zr - ze
            # mean of (dc - ze - r s)^2 expanded in sufficient statistics
            mse = (sum_dd + n * ze * ze + r * r * sss - 2 * ze * sum_d - 2 * r * sds
                   + 2 * ze * r * ss) / n
            mse = np.where(r >= -1e-12, mse, np.inf)
            best_mse = mse.min()
            for a, b in zip(*np.nonzero(mse <= best_mse + tie_tol)):
                candidates.append((float(mse[a, b]), _RANK[kind], float(ridges[b]), float(eaves[a]),
                                   hipl, hipw, kind))
    # best candidate per kind, exact ties going to lower heights and insets
    per_kind = {}
    for kind in {c[6] for c in candidates}:
        own = [c for c in candidates if c[6] == kind]
        low = min(c[0] for c in own)
        per_kind[kind] = min((c for c in own if c[0] <= low + tie_tol), key=lambda c: c[1:6])
    best_rmse = math.sqrt(max(min(c[0] for c in per_kind.values()), 0.0))
    # a simpler kind wins when its misfit is within height-grid quantisation noise
    near = [c for c in per_kind.values()
            if math.sqrt(max(c[0], 0.0)) <= best_rmse + grid.kind_tol_m]
    _, _, z_r, z_e, hipl, hipw, kind = min(near, key=lambda c: c[1])
    z_r = max(z_r, z_e)
    params = RoofParams(float(z_r), float(z_e), float(hipl), float(hipw))
    if z_ground is None:
        z_ground = float(d.min())
    model = RoofModel(rect, kind, params, 0.0, float(z_ground), gsd_m)
    model.rmse = rmse_of(model, xs, ys, d)
    return model


def estimate_base_height(segment: BuildingSegment, dsm, ring_px: int = 3,
                         percentile: float = 5.0) -> float:
    """Ground height from the DSM in a thin ring just outside the segment."""
    dsm = np.asarray(dsm, dtype=float)
    padded, (r0, c0) = segment.padded_mask(ring_px)
    ring = ndimage.binary_dilation(padded, structure=EIGHT, iterations=ring_px) & ~padded
    rr, cc = np.nonzero(ring)
    rr, cc = rr + r0, cc + c0
    ok = (rr >= 0) & (rr < dsm.shape[0]) & (cc >= 0) & (cc < dsm.shape[1])
    vals = dsm[rr[ok], cc[ok]]
    vals = vals[np.isfinite(vals)]
    if vals.size:
        return float(np.percentile(vals, percentile))
    ir, ic = segment.pixels()
    inside = dsm[ir, ic]
    inside = inside[np.isfinite(inside)]
    if not inside.size:
        raise InsufficientData(f"segment {segment.id} has no valid DSM cells")
    return float(inside.min())


def model_raster(model: RoofModel, shape=None):
    """Fitted heights over the rectangle bounds: ``(values, (row0, col0))``, NaN outside."""
    grid = model.rect.bbox(shape)
    values = synthesize_roof_height(model.kind, model.params, model.rect, grid, model.gsd_m)
    return values, (grid[0], grid[1])
