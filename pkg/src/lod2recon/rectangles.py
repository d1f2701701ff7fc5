"""Grid-based decomposition of a building footprint into rectangles.

Work happens in an axis-aligned frame obtained by rotating the segment so its
dominant orientation lies along +x.  Axis-aligned rectangles in that frame are
``(row0, col0, row1, col1)`` tuples with exclusive ends.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NotAdjacent
from .segmentation import BuildingSegment, label_components


@dataclass
class OrientedRect:
    """Rectangle in scene pixel coordinates; ``length`` runs along ``theta``."""

    cx: float
    cy: float
    length: float
    width: float
    theta: float

    def __post_init__(self):
        if self.width > self.length:
            self.length, self.width = self.width, self.length
            self.theta += math.pi / 2
        theta = float(self.theta % math.pi)
        # a tiny negative angle wraps to exactly pi after rounding
        self.theta = 0.0 if theta >= math.pi else theta

    @property
    def axes(self):
        u = np.array([math.cos(self.theta), math.sin(self.theta)])
        v = np.array([-math.sin(self.theta), math.cos(self.theta)])
        return u, v

    @property
    def area(self):
        return self.length * self.width

    def local_coords(self, xs, ys):
        """Map scene points to the frame with x in [0, length], y in [0, width]."""
        u, v = self.axes
        dx = np.asarray(xs, dtype=float) - self.cx
        dy = np.asarray(ys, dtype=float) - self.cy
        return dx * u[0] + dy * u[1] + self.length / 2, dx * v[0] + dy * v[1] + self.width / 2

    def to_scene(self, lx, ly):
        u, v = self.axes
        lx = np.asarray(lx, dtype=float) - self.length / 2
        ly = np.asarray(ly, dtype=float) - self.width / 2
        return self.cx + lx * u[0] + ly * v[0], self.cy + lx * u[1] + ly * v[1]

    def corners(self):
        xs, ys = self.to_scene([0, self.length, self.length, 0], [0, 0, self.width, self.width])
        return np.stack([xs, ys], axis=1)

    def contains(self, xs, ys, tol=1e-9):
        lx, ly = self.local_coords(xs, ys)
        return (lx >= -tol) & (lx <= self.length + tol) & (ly >= -tol) & (ly <= self.width + tol)

    def bbox(self, shape=None):
        """Pixel bounds ``(row0, col0, row1, col1)`` of the covered pixel centres."""
        c = self.corners()
        r0, r1 = int(math.ceil(c[:, 1].min() - 1e-9)), int(math.floor(c[:, 1].max() + 1e-9)) + 1
        c0, c1 = int(math.ceil(c[:, 0].min() - 1e-9)), int(math.floor(c[:, 0].max() + 1e-9)) + 1
        if shape is not None:
            r0, c0 = max(r0, 0), max(c0, 0)
            r1, c1 = min(r1, shape[0]), min(c1, shape[1])
        return r0, c0, r1, c1

    def rasterize(self, shape) -> np.ndarray:
        """Boolean scene raster of pixels whose centres fall inside."""
        out = np.zeros(shape, dtype=bool)
        r0, c0, r1, c1 = self.bbox(shape)
        if r1 <= r0 or c1 <= c0:
            return out
        ys, xs = np.mgrid[r0:r1, c0:c1]
        out[r0:r1, c0:c1] = self.contains(xs, ys)
        return out

    def as_row(self, rect_id):
        return [rect_id, self.cx, self.cy, self.length, self.width, math.degrees(self.theta)]


RECT_CSV_HEADER = ["id", "cx", "cy", "len", "wid", "theta_deg"]


@dataclass
class MergeFeatures:
    c_mean_a: np.ndarray
    c_mean_b: np.ndarray
    h_mean_a: float
    h_mean_b: float
    edge_gap_max: float

    @property
    def color_diff(self) -> float:
        """Mean absolute per-band difference of the rectangles' mean colours."""
        return float(np.mean(np.abs(np.asarray(self.c_mean_a, float) - np.asarray(self.c_mean_b, float))))

    @property
    def height_diff(self) -> float:
        return abs(self.h_mean_a - self.h_mean_b)


def should_merge(features: MergeFeatures, T_d=10.0, T_h1=0.5, T_h2=0.1) -> bool:
    """Merge rule: all three differences strictly below their thresholds."""
    return (features.color_diff < T_d and features.height_diff < T_h1
            and features.edge_gap_max < T_h2)


# --------------------------------------------------------------------------
# rotation into the axis frame
# --------------------------------------------------------------------------

@dataclass
class AxisRotation:
    """Scene <-> rotated-frame mapping; rotated pixel centres sit at integers."""

    theta: float
    center: tuple  # (x, y) rotation centre in scene pixels
    offset: tuple  # (x, y) rotated-frame coordinate of output pixel (0, 0) relative to centre
    shape: tuple  # rotated raster (rows, cols)

    def to_source(self, col, row):
        c, s = math.cos(self.theta), math.sin(self.theta)
        x = np.asarray(col, dtype=float) + self.offset[0]
        y = np.asarray(row, dtype=float) + self.offset[1]
        return self.center[0] + c * x - s * y, self.center[1] + s * x + c * y

    def to_rotated(self, x, y):
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        return c * dx + s * dy - self.offset[0], -s * dx + c * dy - self.offset[1]

    def source_indices(self):
        """Nearest source (row, col) for every rotated pixel."""
        rows, cols = np.mgrid[0:self.shape[0], 0:self.shape[1]]
        xs, ys = self.to_source(cols, rows)
        return np.floor(ys + 0.5).astype(int), np.floor(xs + 0.5).astype(int)

    def resample(self, raster, fill=0):
        """Nearest-neighbour resampling of a scene raster into the rotated frame."""
        raster = np.asarray(raster)
        rr, cc = self.source_indices()
        ok = (rr >= 0) & (rr < raster.shape[0]) & (cc >= 0) & (cc < raster.shape[1])
        out = np.full(self.shape + raster.shape[2:], fill, dtype=raster.dtype)
        out[ok] = raster[rr[ok], cc[ok]]
        return out


def rotate_mask_to_axis(segment: BuildingSegment, theta: float):
    """Rotate the segment so direction ``theta`` becomes +x (nearest neighbour).

    Returns the rotated mask and the :class:`AxisRotation` that maps rotated
    pixel coordinates back to scene pixels exactly.
    """
    rr, cc = segment.pixels()
    center = (float(cc.mean()), float(rr.mean()))
    r0, c0, r1, c1 = segment.bbox
    box = np.array([[c0 - 0.5, r0 - 0.5], [c1 - 0.5, r0 - 0.5],
                    [c1 - 0.5, r1 - 0.5], [c0 - 0.5, r1 - 0.5]])
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = box[:, 0] - center[0], box[:, 1] - center[1]
    rx, ry = c * dx + s * dy, -s * dx + c * dy
    w = int(math.ceil(rx.max() - rx.min() - 1e-9))
    h = int(math.ceil(ry.max() - ry.min() - 1e-9))
    tf = AxisRotation(float(theta), center, (float(rx.min() + 0.5), float(ry.min() + 0.5)), (h, w))
    src_r, src_c = tf.source_indices()
    pr, pc = src_r - r0, src_c - c0
    ok = (pr >= 0) & (pr < segment.mask.shape[0]) & (pc >= 0) & (pc < segment.mask.shape[1])
    rotated = np.zeros((h, w), dtype=bool)
    rotated[ok] = segment.mask[pr[ok], pc[ok]]
    return rotated, tf


# --------------------------------------------------------------------------
# gradient pre-split
# --------------------------------------------------------------------------

def gradient_presplit(mask, dsm, ortho=None, threshold=1.0, min_label_area=10):
    """Cut the mask along steep DSM gradients and relabel the pieces.

    Pixels with gradient magnitude strictly above ``threshold`` (m/px) form
    curtains; the remaining pixels are labelled by 4-connectivity and every
    curtain pixel joins its nearest label.  Gradients only use in-mask heights.
    """
    mask = np.asarray(mask, dtype=bool)
    labels = np.zeros(mask.shape, dtype=np.int32)
    if not mask.any():
        return labels
    dsm = np.asarray(dsm, dtype=float)
    valid = mask & np.isfinite(dsm)
    if not valid.any():
        labels[mask] = 1
        return labels
    _, (ir, ic) = ndimage.distance_transform_edt(~valid, return_indices=True)
    filled = dsm[ir, ic]
    gy, gx = np.gradient(filled)
    curtain = mask & (np.hypot(gx, gy) > threshold)
    core, n = label_components(mask & ~curtain, connectivity=4)
    if n:
        sizes = np.bincount(core.ravel(), minlength=n + 1)
        small = sizes < min_label_area
        small[0] = False
        if small[1:].any():
            core[small[core]] = 0
            core, n = label_components(core > 0, connectivity=4)
    if n == 0:
        labels[mask] = 1
        return labels
    _, (jr, jc) = ndimage.distance_transform_edt(core == 0, return_indices=True)
    labels[mask] = core[jr, jc][mask]
    return labels


# --------------------------------------------------------------------------
# maximal inner rectangles
# --------------------------------------------------------------------------

def largest_inner_rectangle(mask):
    """Largest all-ones axis-aligned rectangle via the histogram stack scan.

    Returns ``((row0, col0, row1, col1), area)``; ``(None, 0)`` for an empty mask.
    Ties keep the first rectangle found scanning rows top to bottom.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    heights = np.zeros(w + 1, dtype=np.int64)
    best, best_area = None, 0
    for r in range(h):
        row = mask[r]
        heights[:w] = np.where(row, heights[:w] + 1, 0)
        hs = heights.tolist()
        stack = []
        for c in range(w + 1):
            start = c
            hc = hs[c]
            while stack and stack[-1][1] > hc:
                s, sh = stack.pop()
                area = sh * (c - s)
                if area > best_area:
                    best_area = area
                    best = (r - sh + 1, s, r + 1, c)
                start = s
            if not stack or stack[-1][1] < hc:
                stack.append((start, hc))
    return best, best_area


def _downsample(mask):
    h, w = mask.shape
    m = np.pad(mask, ((0, h % 2), (0, w % 2)))
    blocks = m.reshape(m.shape[0] // 2, 2, m.shape[1] // 2, 2).sum(axis=(1, 3))
    return blocks >= 2


def pyramid_depth(shape, levels=3, min_coarse_side=16):
    """Number of x2 reductions actually used: the coarsest layer keeps >= min_coarse_side px."""
    depth = 0
    side = min(shape)
    while depth < levels - 1 and side // 2 >= min_coarse_side:
        side //= 2
        depth += 1
    return depth


def relax_rectangle(rect, avail, max_iter=None):
    """Move each side to where at least half of the boundary line is available."""
    r0, c0, r1, c1 = rect
    h, w = avail.shape
    r0, c0 = max(r0, 0), max(c0, 0)
    r1, c1 = min(r1, h), min(c1, w)
    if r1 <= r0 or c1 <= c0:
        return None
    if max_iter is None:
        max_iter = 4 * (h + w)
    for _ in range(max_iter):
        before = (r0, c0, r1, c1)
        if avail[r0, c0:c1].mean() < 0.5 and r1 - r0 > 1:
            r0 += 1
        elif r0 > 0 and avail[r0 - 1, c0:c1].mean() >= 0.5:
            r0 -= 1
        if avail[r1 - 1, c0:c1].mean() < 0.5 and r1 - r0 > 1:
            r1 -= 1
        elif r1 < h and avail[r1, c0:c1].mean() >= 0.5:
            r1 += 1
        if avail[r0:r1, c0].mean() < 0.5 and c1 - c0 > 1:
            c0 += 1
        elif c0 > 0 and avail[r0:r1, c0 - 1].mean() >= 0.5:
            c0 -= 1
        if avail[r0:r1, c1 - 1].mean() < 0.5 and c1 - c0 > 1:
            c1 -= 1
        elif c1 < w and avail[r0:r1, c1].mean() >= 0.5:
            c1 += 1
        if (r0, c0, r1, c1) == before:
            break
    if avail[r0:r1, c0:c1].mean() < 0.5:
        return None
    return (r0, c0, r1, c1)


def relax_rectangles(rects, mask):
    """Relax rectangles in order; each one may only claim pixels not yet taken."""
    claimed = np.zeros(mask.shape, dtype=bool)
    out = []
    for rect in rects:
        got = relax_rectangle(rect, mask & ~claimed)
        if got is None:
            continue
        r0, c0, r1, c1 = got
        claimed[r0:r1, c0:c1] = True
        out.append(got)
    return out


def extract_max_inner_rectangles(mask, levels=3, coverage=0.95, min_area=4, min_coarse_side=16):
    """Greedy maximal-rectangle cover of a mask through an image pyramid.

    On the coarsest layer the largest all-ones rectangle is taken and cleared
    until ``coverage`` of that layer is covered or the next one would be smaller
    than ``min_area``; the first rectangle is always kept so no mask goes uncovered.  Rectangles are then carried down one layer at a time and
    their sides adjusted to the finer mask.  Small masks use fewer layers so the
    coarsest layer keeps at least ``min_coarse_side`` pixels per side.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    layers = [mask]
    for _ in range(pyramid_depth(mask.shape, levels, min_coarse_side)):
        layers.append(_downsample(layers[-1]))
    coarse = layers[-1].copy()
    total = int(coarse.sum())
    rects, covered = [], 0
    while total and covered / total < coverage:
        rect, area = largest_inner_rectangle(coarse)
        if rect is None or (rects and area < min_area):
            break
        r0, c0, r1, c1 = rect
        coarse[r0:r1, c0:c1] = False
        covered += area
        rects.append(rect)
    for layer in reversed(layers[:-1]):
        scaled = [(2 * r0, 2 * c0, 2 * r1, 2 * c1) for r0, c0, r1, c1 in rects]
        rects = relax_rectangles(scaled, layer)
    return rects


# --------------------------------------------------------------------------
# merging
# --------------------------------------------------------------------------

def _shared_edge(a, b):
    """Describe the common edge of two axis rectangles, or None."""
    ar0, ac0, ar1, ac1 = a
    br0, bc0, br1, bc1 = b
    lo, hi = max(ar0, br0), min(ar1, br1)
    if hi - lo >= 1:
        if ac1 == bc0:
            return "x", ac1, lo, hi, -1  # a lies on the low-x side
        if bc1 == ac0:
            return "x", ac0, lo, hi, +1
    lo, hi = max(ac0, bc0), min(ac1, bc1)
    if hi - lo >= 1:
        if ar1 == br0:
            return "y", ar1, lo, hi, -1
        if br1 == ar0:
            return "y", ar0, lo, hi, +1
    return None


def rects_adjacent(a, b) -> bool:
    return _shared_edge(a, b) is not None


def rects_aligned(a, b, tol=2) -> bool:
    """True when the pair's bounding rectangle adds at most ``tol`` px beyond either end."""
    edge = _shared_edge(a, b)
    if edge is None:
        return False
    if edge[0] == "x":
        return abs(a[0] - b[0]) <= tol and abs(a[2] - b[2]) <= tol
    return abs(a[1] - b[1]) <= tol and abs(a[3] - b[3]) <= tol


def _valid_heights(dsm, mask):
    v = np.isfinite(dsm)
    return v if mask is None else v & mask


def compute_edge_gap(rect_a, rect_b, dsm, mask=None, depth=3) -> float:
    """Largest difference of window means across the common edge of two rectangles.

    At every position along the shared edge the DSM is averaged over a strip
    ``depth`` pixels deep on each side (clipped to each rectangle).
    """
    edge = _shared_edge(rect_a, rect_b)
    if edge is None:
        raise NotAdjacent(f"rectangles {rect_a} and {rect_b} do not share an edge")
    axis, at, lo, hi, side = edge
    dsm = np.asarray(dsm, dtype=float)
    valid = _valid_heights(dsm, mask)
    if axis == "y":
        dsm_t, valid_t = dsm.T, valid.T
        a = (rect_a[1], rect_a[0], rect_a[3], rect_a[2])
        b = (rect_b[1], rect_b[0], rect_b[3], rect_b[2])
    else:
        dsm_t, valid_t, a, b = dsm, valid, rect_a, rect_b
    # columns index across the edge, rows along it
    lo_rect, hi_rect = (a, b) if side == -1 else (b, a)
    d_lo = min(depth, lo_rect[3] - lo_rect[1])
    d_hi = min(depth, hi_rect[3] - hi_rect[1])
    win_lo = slice(at - d_lo, at)
    win_hi = slice(at, at + d_hi)
    vals_lo, ok_lo = dsm_t[lo:hi, win_lo], valid_t[lo:hi, win_lo]
    vals_hi, ok_hi = dsm_t[lo:hi, win_hi], valid_t[lo:hi, win_hi]
    n_lo, n_hi = ok_lo.sum(axis=1), ok_hi.sum(axis=1)
    use = (n_lo > 0) & (n_hi > 0)
    if not use.any():
        return math.inf
    m_lo = np.where(ok_lo, vals_lo, 0.0).sum(axis=1)[use] / n_lo[use]
    m_hi = np.where(ok_hi, vals_hi, 0.0).sum(axis=1)[use] / n_hi[use]
    return float(np.max(np.abs(m_lo - m_hi)))


def _rect_means(rect, dsm, ortho, mask):
    r0, c0, r1, c1 = rect
    sel = np.ones((r1 - r0, c1 - c0), dtype=bool) if mask is None else mask[r0:r1, c0:c1]
    h = dsm[r0:r1, c0:c1]
    hv = sel & np.isfinite(h)
    h_mean = float(h[hv].mean()) if hv.any() else math.nan
    col = np.asarray(ortho[r0:r1, c0:c1], dtype=float)
    c_mean = col[sel].mean(axis=0) if sel.any() else np.full(3, math.nan)
    return c_mean, h_mean


def merge_features(rect_a, rect_b, dsm, ortho, mask=None, depth=3) -> MergeFeatures:
    ca, ha = _rect_means(rect_a, dsm, ortho, mask)
    cb, hb = _rect_means(rect_b, dsm, ortho, mask)
    gap = compute_edge_gap(rect_a, rect_b, dsm, mask, depth)
    return MergeFeatures(ca, cb, ha, hb, gap)


def merge_adjacent_rects(rects, dsm, ortho, T_d=10.0, T_h1=0.5, T_h2=0.1, mask=None, depth=3,
                         align_tol=2):
    """Merge adjacent rectangles to a fixed point, scanning pairs in index order.

    A merged pair becomes the bounding rectangle of the two and keeps the lower
    index; the scan restarts after every merge.  Only pairs whose ends line up
    within ``align_tol`` px are candidates, so the bounding rectangle never
    swallows a re-entrant corner (pass ``align_tol=None`` to disable).
    """
    rects = list(rects)
    dsm = np.asarray(dsm, dtype=float)
    changed = True
    while changed:
        changed = False
        for i in range(len(rects)):
            for j in range(i + 1, len(rects)):
                a, b = rects[i], rects[j]
                if not rects_adjacent(a, b):
                    continue
                if align_tol is not None and not rects_aligned(a, b, align_tol):
                    continue
                if should_merge(merge_features(a, b, dsm, ortho, mask, depth), T_d, T_h1, T_h2):
                    rects[i] = (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))
                    del rects[j]
                    changed = True
                    break
            if changed:
                break
    return rects


# --------------------------------------------------------------------------
# whole-segment decomposition
# --------------------------------------------------------------------------

@dataclass
class Decomposition:
    rects: list  # OrientedRect in scene pixels
    axis_rects: list  # (row0, col0, row1, col1) in the rotated frame
    rotation: AxisRotation
    rotated_mask: np.ndarray
    labels: np.ndarray


def axis_rect_to_oriented(rect, tf: AxisRotation) -> OrientedRect:
    r0, c0, r1, c1 = rect
    cx, cy = tf.to_source((c0 + c1 - 1) / 2.0, (r0 + r1 - 1) / 2.0)
    return OrientedRect(float(cx), float(cy), float(c1 - c0), float(r1 - r0), tf.theta)


def decompose_segment(segment: BuildingSegment, theta, dsm, ortho, T_d=10.0, T_h1=0.5, T_h2=0.1,
                      grad_threshold=1.0, levels=3, coverage=0.95, min_rect_area=4,
                      edge_depth=3, align_tol=2) -> Decomposition:
    rot_mask, tf = rotate_mask_to_axis(segment, theta)
    rot_dsm = tf.resample(np.asarray(dsm, dtype=float), np.nan)
    rot_ortho = tf.resample(ortho, 0)
    labels = gradient_presplit(rot_mask, rot_dsm, rot_ortho, grad_threshold)
    rects = []
    for lab in range(1, int(labels.max()) + 1):
        piece = labels == lab
        found = extract_max_inner_rectangles(piece, levels, coverage, min_rect_area)
        # thin pieces left by the curtain cut can only hold slivers
        rects.extend((r, lab) for r in found if (r[2] - r[0]) * (r[3] - r[1]) >= min_rect_area)
    # larger rectangles claim contested pixels first
    rects.sort(key=lambda t: (-(t[0][2] - t[0][0]) * (t[0][3] - t[0][1]), t[0]))
    claimed = np.zeros(rot_mask.shape, dtype=bool)
    relaxed = []
    for rect, lab in rects:
        got = relax_rectangle(rect, (labels == lab) & ~claimed)
        if got is None:
            continue
        claimed[got[0]:got[2], got[1]:got[3]] = True
        relaxed.append(got)
    merged = merge_adjacent_rects(relaxed, rot_dsm, rot_ortho, T_d, T_h1, T_h2, rot_mask, edge_depth,
                                  align_tol)
    oriented = [axis_rect_to_oriented(r, tf) for r in merged]
    return Decomposition(oriented, merged, tf, rot_mask, labels)
