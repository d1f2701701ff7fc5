"""Boundary vectorization and regularization of building segments.

Polygons are ``(n, 2)`` float arrays of ``(x, y) = (col, row)`` scene pixel
coordinates, pixel centres at integers, stored open (the closing edge back to
vertex 0 is implicit).  "Counter-clockwise" means positive shoelace area in
that frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePolygon
from .segmentation import BuildingSegment

# clockwise on screen (row axis points down): N, NE, E, SE, S, SW, W, NW
_MOORE = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}

HALF_PI = math.pi / 2


@dataclass
class OrientationSet:
    angles: list  # radians in [0, pi/2), strongest first
    dominant: int = 0
    strengths: list = field(default_factory=list)

    @property
    def dominant_angle(self) -> float:
        return self.angles[self.dominant]


# --------------------------------------------------------------------------
# basic geometry
# --------------------------------------------------------------------------

def signed_area(ring) -> float:
    ring = np.asarray(ring, dtype=float)
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def edge_vectors(ring):
    ring = np.asarray(ring, dtype=float)
    return np.roll(ring, -1, axis=0) - ring


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.hypot(*(p - a - t * ab)))


def _segments_cross(p1, p2, q1, q2, eps=1e-9) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
            ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)):
        return True

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - eps <= c[0] <= max(a[0], b[0]) + eps and
                min(a[1], b[1]) - eps <= c[1] <= max(a[1], b[1]) + eps)

    if abs(d1) <= eps and on_seg(q1, q2, p1):
        return True
    if abs(d2) <= eps and on_seg(q1, q2, p2):
        return True
    if abs(d3) <= eps and on_seg(p1, p2, q1):
        return True
    if abs(d4) <= eps and on_seg(p1, p2, q2):
        return True
    return False


def is_simple(ring) -> bool:
    ring = np.asarray(ring, dtype=float)
    n = len(ring)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = ring[i], ring[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_cross(a1, a2, ring[j], ring[(j + 1) % n]):
                return False
    return True


def polygon_mask(ring, shape, offset=(0, 0)) -> np.ndarray:
    """Rasterize: pixel centres inside the polygon or on its boundary are set.

    ``shape`` is the patch size and ``offset`` its (row0, col0) in the scene.
    """
    ring = np.asarray(ring, dtype=float)
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    px = (xs + offset[1]).ravel().astype(float)
    py = (ys + offset[0]).ravel().astype(float)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
        dx, dy = x2 - x1, y2 - y1
        ll = dx * dx + dy * dy
        if ll == 0:
            d2 = (px - x1) ** 2 + (py - y1) ** 2
        else:
            t = np.clip(((px - x1) * dx + (py - y1) * dy) / ll, 0.0, 1.0)
            d2 = (px - x1 - t * dx) ** 2 + (py - y1 - t * dy) ** 2
        on_edge |= d2 <= 1e-12
    return (inside | on_edge).reshape(h, w)


def _line_intersection(p, d, q, e):
    """Intersection of lines p + s d and q + t e, or None when parallel."""
    den = d[0] * e[1] - d[1] * e[0]
    if abs(den) < 1e-12:
        return None
    s = ((q[0] - p[0]) * e[1] - (q[1] - p[1]) * e[0]) / den
    return np.array([p[0] + s * d[0], p[1] + s * d[1]])


def _fold90(a):
    return a % HALF_PI


def _angle_diff_mod(a, b, period):
    d = (a - b) % period
    return min(d, period - d)


# --------------------------------------------------------------------------
# tracing and simplification
# --------------------------------------------------------------------------

def trace_boundary(segment: BuildingSegment) -> np.ndarray:
    """Moore-neighbour trace of the outer contour through boundary pixel centres."""
    mask = np.pad(np.asarray(segment.mask, dtype=bool), 1)
    r0, c0 = segment.offset[0] - 1, segment.offset[1] - 1
    set_idx = np.flatnonzero(mask)
    if len(set_idx) == 0:
        raise DegeneratePolygon("empty segment")
    start = divmod(int(set_idx[0]), mask.shape[1])
    if len(set_idx) == 1:
        y, x = start[0] + r0, start[1] + c0
        return np.array([[x - 0.5, y - 0.5], [x + 0.5, y - 0.5],
                         [x + 0.5, y + 0.5], [x - 0.5, y + 0.5]], dtype=float)

    path = [start]
    p = start
    back = _MOORE_INDEX[(0, -1)]  # west of the first raster pixel is empty
    first_move = None
    limit = 4 * mask.size + 8
    for _ in range(limit):
        nxt = None
        for k in range(1, 9):
            d = (back + k) % 8
            q = (p[0] + _MOORE[d][0], p[1] + _MOORE[d][1])
            if mask[q]:
                prev = (back + k - 1) % 8
                b_abs = (p[0] + _MOORE[prev][0], p[1] + _MOORE[prev][1])
                nxt = q
                back = _MOORE_INDEX[(b_abs[0] - q[0], b_abs[1] - q[1])]
                break
        if nxt is None:  # isolated pixel, handled above
            break
        move = (p, nxt)
        if first_move is None:
            first_move = move
        elif move == first_move:
            break
        p = nxt
        path.append(p)
    if path[-1] == path[0] and len(path) > 1:
        path.pop()
    ring = np.array([(c + c0, r + r0) for r, c in path], dtype=float)
    return ring


def _dp_chain(pts, eps):
    """Douglas-Peucker on an open chain; returns kept indices (sorted)."""
    n = len(pts)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = pts[i], pts[j]
        ab = b - a
        ll = float(ab @ ab)
        seg = pts[i + 1:j]
        if ll == 0:
            d = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            t = np.clip(((seg - a) @ ab) / ll, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d = np.hypot(seg[:, 0] - proj[:, 0], seg[:, 1] - proj[:, 1])
        k = int(np.argmax(d))
        if d[k] > eps:
            idx = i + 1 + k
            keep[idx] = True
            stack.append((i, idx))
            stack.append((idx, j))
    return np.flatnonzero(keep)


def simplify_dp(ring, epsilon_px: float = 2.0) -> np.ndarray:
    """Douglas-Peucker simplification of a closed ring.

    The ring is opened at its lexicographically smallest vertex (always a
    convex-hull corner) and split at the vertex farthest from it.
    """
    if epsilon_px <= 0:
        raise ValueError("epsilon_px must be positive")
    ring = np.asarray(ring, dtype=float)
    if len(ring) < 3:
        raise DegeneratePolygon("ring has fewer than 3 vertices")
    start = int(np.lexsort((ring[:, 1], ring[:, 0]))[0])
    ring = np.roll(ring, -start, axis=0)
    dist = np.hypot(*(ring - ring[0]).T)
    far = int(np.argmax(dist))
    if dist[far] == 0:
        raise DegeneratePolygon("all vertices coincide")
    closed = np.vstack([ring, ring[:1]])
    first = _dp_chain(closed[:far + 1], epsilon_px)
    second = _dp_chain(closed[far:], epsilon_px) + far
    idx = np.concatenate([first, second[1:-1]])
    out = ring[idx]
    if len(out) < 3:
        raise DegeneratePolygon(f"only {len(out)} vertices survive simplification")
    return out


# --------------------------------------------------------------------------
# main orientations
# --------------------------------------------------------------------------

def estimate_main_orientations(ring, T_l: float = 90.0, bin_deg: float = 5.0) -> OrientationSet:
    """Length-weighted histogram of edge directions folded modulo 90 degrees.

    Bins whose summed edge length reaches ``T_l`` yield an orientation; the
    strongest bin is kept regardless.  Each orientation is the length-weighted
    circular mean over its bin and the two neighbouring bins.
    """
    vec = edge_vectors(ring)
    lengths = np.hypot(vec[:, 0], vec[:, 1])
    ok = lengths > 0
    vec, lengths = vec[ok], lengths[ok]
    if len(lengths) == 0:
        raise DegeneratePolygon("ring has no edges")
    folded = _fold90(np.arctan2(vec[:, 1], vec[:, 0]))
    width = math.radians(bin_deg)
    nbins = int(round(HALF_PI / width))
    bins = np.minimum((folded / width).astype(int), nbins - 1)
    hist = np.bincount(bins, weights=lengths, minlength=nbins)

    order = sorted(range(nbins), key=lambda b: (-hist[b], b))
    angles, strengths = [], []
    for rank, b in enumerate(order):
        if hist[b] <= 0 or (rank > 0 and hist[b] < T_l):
            continue
        window = np.isin(bins, [(b - 1) % nbins, b, (b + 1) % nbins])
        z = np.sum(lengths[window] * np.exp(4j * folded[window]))
        a = float(np.angle(z) / 4) % HALF_PI
        if any(_angle_diff_mod(a, other, HALF_PI) < width for other in angles):
            continue
        angles.append(a)
        strengths.append(float(hist[b]))
    return OrientationSet(angles, 0, strengths)


# --------------------------------------------------------------------------
# line snapping
# --------------------------------------------------------------------------

def _snap_direction(phi, orients):
    best, best_d = None, None
    for o in orients:
        for cand in (o, o + HALF_PI):
            d = _angle_diff_mod(phi, cand, math.pi)
            if best_d is None or d < best_d - 1e-15:
                best, best_d = cand, d
    # the representative closest to phi (mod pi) keeps the edge's sense
    k = round((phi - best) / math.pi)
    return best + k * math.pi


@dataclass
class _Line:
    point: np.ndarray
    direction: np.ndarray  # unit
    length: float
    end_vertex: np.ndarray  # original ring vertex where this line ends
    short: bool = False


def _close_lines(lines, jog_tol):
    """Resolve consecutive parallel lines, then intersect neighbours into a ring."""
    changed = True
    while changed and len(lines) >= 3:
        changed = False
        n = len(lines)
        for i in range(n):
            a, b = lines[i], lines[(i + 1) % n]
            if abs(a.direction[0] * b.direction[1] - a.direction[1] * b.direction[0]) > 1e-9:
                continue
            offset = abs(a.direction[0] * (b.point[1] - a.point[1]) -
                         a.direction[1] * (b.point[0] - a.point[0]))
            if offset <= jog_tol:
                lines[i] = _merge_parallel(a, b)
                del lines[(i + 1) % n]
            else:
                perp = np.array([-a.direction[1], a.direction[0]])
                if perp @ (b.point - a.point) < 0:
                    perp = -perp
                lines.insert(i + 1, _Line(a.end_vertex.copy(), perp, offset, a.end_vertex.copy()))
            changed = True
            break
    if len(lines) < 3:
        raise DegeneratePolygon("fewer than 3 lines remain")
    n = len(lines)
    verts = []
    for i in range(n):
        a, b = lines[i], lines[(i + 1) % n]
        x = _line_intersection(a.point, a.direction, b.point, b.direction)
        verts.append(x)
    ring = np.array(verts)
    return _dedupe(ring)


def _merge_parallel(a: _Line, b: _Line) -> _Line:
    wa, wb = max(a.length, 1e-9), max(b.length, 1e-9)
    point = (wa * a.point + wb * b.point) / (wa + wb)
    return _Line(point, a.direction, a.length + b.length, b.end_vertex)


def _dedupe(ring, tol=1e-6):
    keep = []
    for p in ring:
        if keep and np.hypot(*(p - keep[-1])) < tol:
            continue
        keep.append(p)
    while len(keep) > 1 and np.hypot(*(keep[0] - keep[-1])) < tol:
        keep.pop()
    return np.array(keep)


def _validated(ring, sign):
    if len(ring) < 3:
        raise DegeneratePolygon("polygon collapsed below 3 vertices")
    area = signed_area(ring)
    if area * sign <= 0 or not is_simple(ring):
        raise DegeneratePolygon("regularized polygon is not simple")
    return ring


def snap_and_merge_lines(ring, orients: OrientationSet, T_l: float = 90.0,
                         jog_tol: float = 5.0) -> np.ndarray:
    """Snap every edge to the nearest main orientation and absorb short edges.

    Each edge is rotated about its midpoint onto the nearest orientation (or
    its perpendicular).  Edges shorter than ``T_l`` are then absorbed, shortest
    first: between non-parallel neighbours the neighbours are extended to their
    intersection; between parallel neighbours the edge is a jog and the two
    neighbours fuse into one line when their offset is at most ``jog_tol``.
    Edges that cannot be absorbed stay as snapped lines.
    """
    ring = np.asarray(ring, dtype=float)
    if len(ring) < 3:
        raise DegeneratePolygon("ring has fewer than 3 vertices")
    sign = 1.0 if signed_area(ring) >= 0 else -1.0
    vec = edge_vectors(ring)
    lengths = np.hypot(vec[:, 0], vec[:, 1])
    lines = []
    n = len(ring)
    for i in range(n):
        if lengths[i] == 0:
            continue
        phi = math.atan2(vec[i, 1], vec[i, 0])
        a = _snap_direction(phi, orients.angles)
        lines.append(_Line(ring[i] + vec[i] / 2, np.array([math.cos(a), math.sin(a)]),
                           float(lengths[i]), ring[(i + 1) % n].copy(),
                           short=lengths[i] < T_l))

    while len(lines) > 3:
        n = len(lines)
        absorbed = False
        for _, i in sorted((ln.length, i) for i, ln in enumerate(lines) if ln.short):
            # rotate so the candidate sits at index 1 between its neighbours
            rot = lines[i - 1:] + lines[:i - 1] if i >= 1 else lines[-1:] + lines[:-1]
            prev, cur, nxt = rot[0], rot[1], rot[2]
            cross = prev.direction[0] * nxt.direction[1] - prev.direction[1] * nxt.direction[0]
            if abs(cross) > math.sin(math.radians(1.0)):
                x = _line_intersection(prev.point, prev.direction, nxt.point, nxt.direction)
                if np.hypot(*(x - cur.point)) <= max(T_l, 2 * cur.length):
                    prev.end_vertex = cur.end_vertex
                    lines = [rot[0]] + rot[2:]
                    absorbed = True
            elif n - 2 >= 3 and prev.direction @ nxt.direction > 0:
                offset = abs(prev.direction[0] * (nxt.point[1] - prev.point[1]) -
                             prev.direction[1] * (nxt.point[0] - prev.point[0]))
                if offset <= jog_tol:
                    merged = _merge_parallel(prev, nxt)
                    merged.length += cur.length
                    merged.short = merged.length < T_l
                    lines = [merged] + rot[3:]
                    absorbed = True
            if absorbed:
                break
        if not absorbed:
            break
    out = _close_lines(lines, jog_tol)
    return _validated(out, sign)


def regularize_with_image_lines(ring, lines, dist_tol: float = 5.0,
                                angle_tol_deg: float = 10.0) -> np.ndarray:
    """Turn polygon edges onto nearby image line segments.

    ``lines`` are ``(point, angle, length)`` tuples.  An edge takes a line's
    angle when the line passes within ``dist_tol`` px of the edge midpoint, the
    angles differ by at most ``angle_tol_deg`` and the two overlap along the
    line; the edge rotates about its midpoint.
    """
    ring = np.asarray(ring, dtype=float)
    if not len(lines):
        return ring.copy()
    sign = 1.0 if signed_area(ring) >= 0 else -1.0
    tol = math.radians(angle_tol_deg)
    vec = edge_vectors(ring)
    n = len(ring)
    pts = np.array([l[0] for l in lines], dtype=float).reshape(-1, 2)
    angs = np.array([l[1] for l in lines], dtype=float)
    lens = np.array([l[2] for l in lines], dtype=float)
    dirs = np.stack([np.cos(angs), np.sin(angs)], axis=1)
    new_dirs = []
    changed = False
    for i in range(n):
        mid = ring[i] + vec[i] / 2
        elen = float(np.hypot(*vec[i]))
        phi = math.atan2(vec[i, 1], vec[i, 0])
        rel = mid - pts
        perp = np.abs(rel[:, 0] * dirs[:, 1] - rel[:, 1] * dirs[:, 0])
        along = np.abs(rel[:, 0] * dirs[:, 0] + rel[:, 1] * dirs[:, 1])
        dang = np.array([_angle_diff_mod(phi, a, math.pi) for a in angs])
        ok = (perp <= dist_tol) & (dang <= tol) & (along <= lens / 2 + elen / 2) & (elen > 0)
        if ok.any():
            cand = np.flatnonzero(ok)
            best = cand[np.lexsort((dang[cand], perp[cand]))[0]]
            k = round((phi - angs[best]) / math.pi)
            a = angs[best] + k * math.pi
            new_dirs.append((mid, np.array([math.cos(a), math.sin(a)])))
            changed = changed or dang[best] > 0
        else:
            new_dirs.append((mid, vec[i] / elen if elen > 0 else None))
    if not changed:
        return ring.copy()
    verts = []
    for i in range(n):
        a_mid, a_dir = new_dirs[i]
        b_mid, b_dir = new_dirs[(i + 1) % n]
        x = None
        if a_dir is not None and b_dir is not None:
            x = _line_intersection(a_mid, a_dir, b_mid, b_dir)
        verts.append(ring[(i + 1) % n] if x is None else x)
    out = _dedupe(np.roll(np.array(verts), 1, axis=0))
    return _validated(out, sign)
