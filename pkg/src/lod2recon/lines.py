"""Simplified line segment detection on the orthophoto.

Follows the region-growing scheme of LSD: regions of aligned level-line
directions are grown on a Gaussian-smoothed image, approximated by rectangles
and kept when dense enough.  Smoothing makes neighbouring directions
correlated, so each surviving rectangle is also checked against the raw
image: its count of aligned raw directions must be unlikely under uniformly
random directions (the a-contrario number of false alarms).
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage, stats

ANGLE_TOL = math.radians(22.5)
# q = 2 quantization noise over sin(tau), as in LSD
GRAD_THRESHOLD = 2.0 / math.sin(ANGLE_TOL)

# probability that a random direction is aligned within ANGLE_TOL
ALIGNED_P = ANGLE_TOL / math.pi

_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def level_line_field(image: np.ndarray):
    """2x2 gradient; returns (level-line angle, magnitude) at cell corners.

    Entry ``[r, c]`` sits at pixel position ``(c + 0.5, r + 0.5)``.  For a
    multi-band image each cell uses the band with the strongest gradient, so
    edges between colours of similar brightness are not lost.
    """
    g = np.asarray(image, dtype=float)
    if g.ndim == 2:
        g = g[:, :, None]
    a, b = g[:-1, :-1], g[:-1, 1:]
    c, d = g[1:, :-1], g[1:, 1:]
    gx = (b + d - a - c) / 2.0
    gy = (c + d - a - b) / 2.0
    band = np.argmax(gx * gx + gy * gy, axis=2)[..., None]
    gx = np.take_along_axis(gx, band, axis=2)[..., 0]
    gy = np.take_along_axis(gy, band, axis=2)[..., 0]
    mag = np.hypot(gx, gy)
    # level line runs perpendicular to the gradient
    angle = np.arctan2(gx, -gy)
    return angle, mag


def _angle_diff(a, b):
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def log10_nfa(n: int, k: int, n_tests: float, p: float = ALIGNED_P) -> float:
    """log10 of the expected number of rectangles with ``k`` of ``n`` aligned pixels by chance."""
    if n <= 0:
        return math.log10(n_tests)
    tail = stats.binom.logsf(k - 1, n, p) / math.log(10)
    return math.log10(n_tests) + tail


def rect_alignment(angle, mag, center, theta, length, width, direction):
    """(pixel count, aligned count) of the raw field inside a rectangle.

    ``direction`` picks which of ``theta`` and ``theta + pi`` the level lines
    must follow; pixels below the gradient threshold count as not aligned.
    """
    h, w = mag.shape
    ux, uy = math.cos(theta), math.sin(theta)
    half = math.hypot(length, width) / 2 + 1
    r0, r1 = max(0, int(center[1] - half)), min(h, int(center[1] + half) + 2)
    c0, c1 = max(0, int(center[0] - half)), min(w, int(center[0] + half) + 2)
    ys, xs = np.mgrid[r0:r1, c0:c1]
    dx, dy = xs - center[0], ys - center[1]
    inside = (np.abs(dx * ux + dy * uy) <= length / 2) & (np.abs(-dx * uy + dy * ux) <= width / 2)
    a, m = angle[r0:r1, c0:c1][inside], mag[r0:r1, c0:c1][inside]
    d = np.abs((a - direction + math.pi) % (2 * math.pi) - math.pi)
    return int(inside.sum()), int(((m > GRAD_THRESHOLD) & (d <= ANGLE_TOL)).sum())


def best_log_nfa(angle, mag, center, theta, length, width, direction, n_tests, step=0.5):
    """Smallest log10 NFA over rectangle widths ``width, width - step, ..., 1``.

    A sharp raw edge is thinner than the blurred region it was found in, so
    narrower rectangles, also shifted sideways by ``step``, are tried before
    judging it.
    """
    nx, ny = -math.sin(theta), math.cos(theta)
    best = math.inf
    wd = width
    while True:
        for shift in (0.0, -step, step):
            c = (center[0] + shift * nx, center[1] + shift * ny)
            n, k = rect_alignment(angle, mag, c, theta, length, wd, direction)
            best = min(best, log10_nfa(n, k, n_tests))
        if wd <= 1.0:
            return best
        wd = max(1.0, wd - step)


def detect_image_line_segments(ortho: np.ndarray, region=None, min_length: float = 10.0,
                               min_density: float = 0.7, sigma: float = 1.0,
                               log_eps: float = 0.0):
    """Detect straight edges; returns a list of ``(point, angle, length)``.

    The image is smoothed with a Gaussian of ``sigma`` px first so that
    aliased, staircase edges still read as one straight line.

    ``region`` is ``(row0, col0, row1, col1)`` (end-exclusive) in scene pixels;
    ``point`` is the segment centre in scene ``(x, y)`` and ``angle`` lies in
    ``[0, pi)``.
    """
    if region is None:
        region = (0, 0, ortho.shape[0], ortho.shape[1])
    r0, c0, r1, c1 = region
    r0, c0 = max(0, r0), max(0, c0)
    r1, c1 = min(ortho.shape[0], r1), min(ortho.shape[1], c1)
    if r1 - r0 < 2 or c1 - c0 < 2:
        return []
    patch = np.asarray(ortho[r0:r1, c0:c1], dtype=float)
    raw_angle, raw_mag = level_line_field(patch)
    if sigma > 0:
        spatial = (sigma, sigma) + (0,) * (patch.ndim - 2)
        angle, mag = level_line_field(ndimage.gaussian_filter(patch, spatial, mode="nearest"))
    else:
        angle, mag = raw_angle, raw_mag
    h, w = mag.shape
    # five degrees of freedom per rectangle, as in LSD
    n_tests = float(h * w) ** 2.5
    valid = mag > GRAD_THRESHOLD
    if not valid.any():
        return []
    used = ~valid
    order = np.argsort(-mag, axis=None, kind="stable")
    out = []
    for flat in order:
        if not valid.flat[flat]:
            break
        if used.flat[flat]:
            continue
        sr, sc = divmod(int(flat), w)
        used[sr, sc] = True
        region_px = [(sr, sc)]
        theta = float(angle[sr, sc])
        sx, sy = math.cos(theta), math.sin(theta)
        i = 0
        while i < len(region_px):
            pr, pc = region_px[i]
            i += 1
            for dr, dc in _NEIGHBOURS:
                qr, qc = pr + dr, pc + dc
                if 0 <= qr < h and 0 <= qc < w and not used[qr, qc] and \
                        _angle_diff(angle[qr, qc], theta) <= ANGLE_TOL:
                    used[qr, qc] = True
                    region_px.append((qr, qc))
                    sx += math.cos(angle[qr, qc])
                    sy += math.sin(angle[qr, qc])
                    theta = math.atan2(sy, sx)
        seg = _region_to_segment(np.array(region_px), mag, min_length, min_density)
        if seg is None:
            continue
        (cx, cy), ang, length, width = seg
        # orient the segment like the grown level lines
        direction = ang if math.cos(theta - ang) >= 0 else ang + math.pi
        if best_log_nfa(raw_angle, raw_mag, (cx, cy), ang, length, width, direction,
                        n_tests) > log_eps:
            continue
        out.append(((cx + c0 + 0.5, cy + r0 + 0.5), ang, length))
    return out


def _region_to_segment(px, mag, min_length, min_density):
    if len(px) < 2:
        return None
    ys, xs = px[:, 0].astype(float), px[:, 1].astype(float)
    wts = mag[px[:, 0], px[:, 1]]
    wsum = wts.sum()
    cx, cy = (wts * xs).sum() / wsum, (wts * ys).sum() / wsum
    dx, dy = xs - cx, ys - cy
    ixx, iyy, ixy = (wts * dx * dx).sum(), (wts * dy * dy).sum(), (wts * dx * dy).sum()
    # principal axis of the weighted scatter
    theta = 0.5 * math.atan2(2 * ixy, ixx - iyy)
    ux, uy = math.cos(theta), math.sin(theta)
    along = dx * ux + dy * uy
    across = -dx * uy + dy * ux
    length = along.max() - along.min() + 1.0
    # width of a uniform band with the same spread; staircase outliers barely move it
    spread = math.sqrt((wts * across * across).sum() / wsum)
    width = max(1.0, math.sqrt(12.0) * spread)
    if length < min_length:
        return None
    if len(px) / (length * width) < min_density:
        return None
    mid = (along.max() + along.min()) / 2
    mid_w = (across.max() + across.min()) / 2
    px_c = cx + mid * ux - mid_w * uy
    py_c = cy + mid * uy + mid_w * ux
    return (px_c, py_c), theta % math.pi, float(length), float(width)
