"""Slow, obviously-correct reference implementations used by the tests.

None of these share code with the package; each one follows the plain
definition of the quantity it checks.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np


def flood_fill_labels(mask, connectivity=8):
    """Label components by breadth-first flood fill in raster order of first pixel."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    if connectivity == 8:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    n = 0
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or labels[r, c]:
                continue
            n += 1
            labels[r, c] = n
            queue = deque([(r, c)])
            while queue:
                pr, pc = queue.popleft()
                for dr, dc in steps:
                    qr, qc = pr + dr, pc + dc
                    if 0 <= qr < h and 0 <= qc < w and mask[qr, qc] and not labels[qr, qc]:
                        labels[qr, qc] = n
                        queue.append((qr, qc))
    return labels, n


def brute_force_max_rectangle_area(mask):
    """Largest all-ones axis-aligned rectangle by checking every (top, left, bottom, right)."""
    mask = np.asarray(mask, dtype=np.int64)
    h, w = mask.shape
    s = np.zeros((h + 1, w + 1), dtype=np.int64)
    s[1:, 1:] = mask.cumsum(0).cumsum(1)
    t = np.arange(h)[:, None, None, None]
    b = np.arange(1, h + 1)[None, :, None, None]
    l = np.arange(w)[None, None, :, None]
    r = np.arange(1, w + 1)[None, None, None, :]
    ok = (b > t) & (r > l)
    tt, bb = np.broadcast_to(t, ok.shape), np.broadcast_to(b, ok.shape)
    ll, rr = np.broadcast_to(l, ok.shape), np.broadcast_to(r, ok.shape)
    area = (bb - tt) * (rr - ll)
    filled = np.zeros(ok.shape, dtype=np.int64)
    filled[ok] = (s[bb[ok], rr[ok]] - s[tt[ok], rr[ok]] - s[bb[ok], ll[ok]] + s[tt[ok], ll[ok]])
    full = ok & (filled == area)
    return int(area[full].max()) if full.any() else 0


def dp_recursive(points, eps):
    """Textbook recursive Douglas-Peucker on an open polyline; returns kept indices."""
    points = [tuple(map(float, p)) for p in points]

    def dist(p, a, b):
        ax, ay = a
        bx, by = b
        px, py = p
        dx, dy = bx - ax, by - ay
        ll = dx * dx + dy * dy
        if ll == 0:
            return math.hypot(px - ax, py - ay)
        t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / ll))
        return math.hypot(px - ax - t * dx, py - ay - t * dy)

    def rec(i, j):
        if j <= i + 1:
            return []
        best, best_k = -1.0, None
        for k in range(i + 1, j):
            d = dist(points[k], points[i], points[j])
            if d > best:
                best, best_k = d, k
        if best > eps:
            return rec(i, best_k) + [best_k] + rec(best_k, j)
        return []

    return [0] + rec(0, len(points) - 1) + [len(points) - 1]


def point_to_ring_distance(p, ring):
    best = math.inf
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        dx, dy = b[0] - a[0], b[1] - a[1]
        ll = dx * dx + dy * dy
        t = 0.0 if ll == 0 else max(0.0, min(1.0, ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / ll))
        best = min(best, math.hypot(p[0] - a[0] - t * dx, p[1] - a[1] - t * dy))
    return best


def edge_gap_rescan(a, b, dsm, depth=3):
    """Max |mean_a - mean_b| over windows straddling the shared edge of two axis rects.

    Rectangles are (row0, col0, row1, col1), end-exclusive; windows are clipped
    to each rectangle and NaN cells are skipped.
    """
    ar0, ac0, ar1, ac1 = a
    br0, bc0, br1, bc1 = b
    gaps = []

    def mean(vals):
        vals = [v for v in vals if math.isfinite(v)]
        return sum(vals) / len(vals) if vals else None

    if ac1 == bc0 or bc1 == ac0:
        left, right = (a, b) if ac1 == bc0 else (b, a)
        edge = left[3]
        for r in range(max(ar0, br0), min(ar1, br1)):
            lv = [dsm[r, c] for c in range(max(edge - depth, left[1]), edge)]
            rv = [dsm[r, c] for c in range(edge, min(edge + depth, right[3]))]
            ml, mr = mean(lv), mean(rv)
            if ml is not None and mr is not None:
                gaps.append(abs(ml - mr))
    else:
        top, bottom = (a, b) if ar1 == br0 else (b, a)
        edge = top[2]
        for c in range(max(ac0, bc0), min(ac1, bc1)):
            tv = [dsm[r, c] for r in range(max(edge - depth, top[0]), edge)]
            bv = [dsm[r, c] for r in range(edge, min(edge + depth, bottom[2]))]
            mt, mb = mean(tv), mean(bv)
            if mt is not None and mb is not None:
                gaps.append(abs(mt - mb))
    return max(gaps) if gaps else math.inf


def iou2_enumerate(pred, ref):
    inter = union = 0
    for p, r in zip(np.asarray(pred, bool).ravel().tolist(), np.asarray(ref, bool).ravel().tolist()):
        inter += p and r
        union += p or r
    return inter / union


def voxel_set(heights, z_ground, voxel_h):
    """Explicit set of occupied voxels: voxel k of a cell is filled when its centre is under the surface."""
    out = set()
    h = np.asarray(heights, dtype=float)
    for idx, z in np.ndenumerate(h):
        if not math.isfinite(z):
            continue
        k = 0
        while z_ground + (k + 0.5) * voxel_h <= z:
            out.add(idx + (k,))
            k += 1
    return out


def iou3_enumerate(pred, ref, z_ground, voxel_h):
    a, b = voxel_set(pred, z_ground, voxel_h), voxel_set(ref, z_ground, voxel_h)
    return len(a & b) / len(a | b)


def boundary_pixels(mask):
    """Set pixels with an unset 4-neighbour (outside the array counts as unset)."""
    mask = np.asarray(mask, dtype=bool)
    p = np.pad(mask, 1)
    interior = p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    rr, cc = np.nonzero(mask & ~interior)
    return set(zip(cc.tolist(), rr.tolist()))


def random_blob(rng, shape=(24, 24), steps=120):
    """Hole-free 4-connected blob grown by a random walk."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    r, c = h // 2, w // 2
    for _ in range(steps):
        mask[r, c] = True
        dr, dc = [(-1, 0), (1, 0), (0, -1), (0, 1)][rng.integers(4)]
        r = min(max(r + dr, 1), h - 2)
        c = min(max(c + dc, 1), w - 2)
    # fill holes: background not reachable from the border joins the blob
    outside, _ = flood_fill_labels(~mask, connectivity=4)
    border = set(outside[0].tolist() + outside[-1].tolist() + outside[:, 0].tolist()
                 + outside[:, -1].tolist()) - {0}
    return mask | ~np.isin(outside, list(border))
