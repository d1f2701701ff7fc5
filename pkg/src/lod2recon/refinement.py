"""Snap rectangle orientations to nearby road directions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geodata_io import GeoTransform, RoadNetwork
from .polygon import point_segment_distance
from .rectangles import OrientedRect

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class RoadSegment:
    polyline: int
    index: int
    start: tuple  # world (x, y)
    end: tuple
    distance_m: float

    def pixel_angle(self, geo: GeoTransform) -> float:
        """Direction of the segment in the pixel frame, in [0, pi)."""
        dc, dr = geo.direction_to_pixel(self.end[0] - self.start[0], self.end[1] - self.start[1])
        return math.atan2(dr, dc) % math.pi


def nearest_road_segment(rect: OrientedRect, roads: RoadNetwork, geo: GeoTransform,
                         d_max_m: float = 30.0, tie_tol: float = 1e-9):
    """Closest road segment to the rectangle centre (world metres), or None beyond ``d_max_m``."""
    cx, cy = geo.pixel_to_world(rect.cx, rect.cy)
    p = np.array([float(cx), float(cy)])
    best = None
    for li, line in enumerate(roads.polylines):
        for si in range(len(line) - 1):
            d = point_segment_distance(p, line[si], line[si + 1])
            if best is None or d < best.distance_m - tie_tol:
                best = RoadSegment(li, si, tuple(line[si]), tuple(line[si + 1]), float(d))
    if best is None or best.distance_m > d_max_m:
        return None
    return best


def fold_difference(a: float, b: float) -> float:
    """Smallest angle between two directions when they are compared modulo 90 degrees."""
    d = (a - b) % HALF_PI
    return min(d, HALF_PI - d)


def nearest_representative(angle: float, reference: float) -> float:
    """``angle + k * pi/2`` closest to ``reference``."""
    k = round((reference - angle) / HALF_PI)
    return angle + k * HALF_PI


def refit_extent(pixels, theta):
    """Centre, length and width of the box along ``theta`` with the pixels' second moments.

    ``pixels`` is ``(xs, ys)`` of pixel centres.  A filled box of n x m unit
    cells has variance (n^2 - 1) / 12 along its side, so ``sqrt(12 var + 1)``
    recovers the side exactly for grid-aligned boxes and barely moves when the
    pixels were rasterised a few degrees off the new axes, unlike the bounding
    extent, which grows with the corner overhang.
    """
    xs, ys = (np.asarray(v, dtype=float) for v in pixels)
    u = np.array([math.cos(theta), math.sin(theta)])
    v = np.array([-u[1], u[0]])
    cx, cy = xs.mean(), ys.mean()
    a = (xs - cx) * u[0] + (ys - cy) * u[1]
    b = (xs - cx) * v[0] + (ys - cy) * v[1]
    return cx, cy, math.sqrt(12.0 * a.var() + 1.0), math.sqrt(12.0 * b.var() + 1.0)


def snap_rect_orientation(rect: OrientedRect, road_angle: float, tol_deg: float = 10.0,
                          pixels=None) -> OrientedRect:
    """Turn ``rect`` onto the road direction when they agree within ``tol_deg`` (mod 90).

    ``road_angle`` is in the pixel frame.  When the source pixels are given the
    extent is re-fitted along the new axes, otherwise the rectangle rotates in place.
    """
    if fold_difference(rect.theta, road_angle) >= math.radians(tol_deg):
        return rect
    theta = nearest_representative(road_angle, rect.theta)
    if pixels is None or len(pixels[0]) == 0:
        return OrientedRect(rect.cx, rect.cy, rect.length, rect.width, theta)
    cx, cy, length, width = refit_extent(pixels, theta)
    return OrientedRect(float(cx), float(cy), float(length), float(width), theta)


def rect_source_pixels(rect: OrientedRect, mask: np.ndarray, offset=(0, 0)):
    """Pixel centres of ``mask`` (a patch at scene ``offset``) that fall inside ``rect``."""
    mask = np.asarray(mask, dtype=bool)
    r0, c0, r1, c1 = rect.bbox()
    r0, c0 = max(r0, offset[0]), max(c0, offset[1])
    r1, c1 = min(r1, offset[0] + mask.shape[0]), min(c1, offset[1] + mask.shape[1])
    if r1 <= r0 or c1 <= c0:
        return np.zeros(0), np.zeros(0)
    ys, xs = np.mgrid[r0:r1, c0:c1]
    sel = mask[r0 - offset[0]:r1 - offset[0], c0 - offset[1]:c1 - offset[1]] & rect.contains(xs, ys)
    return xs[sel].astype(float), ys[sel].astype(float)


def refine_orientations(rects, roads: RoadNetwork | None, geo: GeoTransform | None, mask=None,
                        d_max_m: float = 30.0, tol_deg: float = 10.0, mask_offset=(0, 0)):
    """Apply road snapping to every rectangle; returns a new list of equal length."""
    if roads is None or geo is None or not roads.polylines:
        return list(rects)
    out = []
    for rect in rects:
        seg = nearest_road_segment(rect, roads, geo, d_max_m)
        if seg is None:
            out.append(rect)
            continue
        pixels = rect_source_pixels(rect, mask, mask_offset) if mask is not None else None
        out.append(snap_rect_orientation(rect, seg.pixel_angle(geo), tol_deg, pixels))
    return out
