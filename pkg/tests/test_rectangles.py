import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lod2recon.errors import NotAdjacent
from lod2recon.rectangles import (MergeFeatures, OrientedRect, compute_edge_gap,
                                  decompose_segment, extract_max_inner_rectangles,
                                  gradient_presplit, largest_inner_rectangle,
                                  merge_adjacent_rects, rotate_mask_to_axis, should_merge)
from lod2recon.segmentation import BuildingSegment, connected_components

from oracles import brute_force_max_rectangle_area, edge_gap_rescan


def _segment(mask):
    return connected_components(np.asarray(mask, bool), min_area=1)[0]


def _features(dc, dh, gap):
    return MergeFeatures(np.array([100.0, 100, 100]), np.array([100.0 + dc] * 3), 10.0, 10.0 + dh, gap)


# OrientedRect basics

def test_oriented_rect_normalises_long_axis():
    r = OrientedRect(0, 0, 10, 20, 0.0)
    assert (r.length, r.width) == (20, 10)
    assert r.theta == pytest.approx(math.pi / 2)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1, 40), st.floats(1, 40),
       st.floats(-7, 7))
def test_local_frame_round_trip(cx, cy, a, b, theta):
    r = OrientedRect(cx, cy, a, b, theta)
    assert 0 <= r.theta < math.pi and r.width <= r.length
    lx, ly = r.local_coords(*r.to_scene([0.3, r.length], [r.width, 0.7]))
    assert np.allclose(lx, [0.3, r.length]) and np.allclose(ly, [r.width, 0.7])


# rotation

def test_zero_rotation_is_identity():
    mask = np.zeros((20, 30), bool)
    mask[3:15, 4:25] = True
    mask[3:8, 4:9] = False
    rot, tf = rotate_mask_to_axis(_segment(mask), 0.0)
    seg = _segment(mask)
    assert np.array_equal(rot, seg.mask)


def test_quarter_turn_swaps_dimensions():
    mask = np.ones((12, 30), bool)
    rot, _ = rotate_mask_to_axis(_segment(mask), math.pi / 2)
    assert rot.shape == (30, 12)
    assert rot.sum() == mask.sum()


def test_random_rotation_preserves_pixel_count(rng):
    for _ in range(50):
        rect = OrientedRect(60, 60, rng.uniform(30, 70), rng.uniform(15, 40), rng.uniform(0, math.pi))
        seg = _segment(rect.rasterize((120, 120)))
        rot, _ = rotate_mask_to_axis(seg, rng.uniform(0, math.pi))
        assert abs(int(rot.sum()) - seg.area_px) <= 0.02 * seg.area_px


def test_rotation_inverse_maps_back_exactly(rng):
    seg = _segment(OrientedRect(40, 40, 50, 20, 0.4).rasterize((80, 80)))
    _, tf = rotate_mask_to_axis(seg, 0.4)
    x, y = rng.uniform(0, 80, 50), rng.uniform(0, 80, 50)
    bx, by = tf.to_source(*tf.to_rotated(x, y))
    assert np.allclose(bx, x, atol=1e-9) and np.allclose(by, y, atol=1e-9)


# gradient pre-split

def test_constant_height_is_one_piece():
    mask = np.ones((20, 40), bool)
    labels = gradient_presplit(mask, np.full(mask.shape, 105.0))
    assert set(np.unique(labels)) == {1}


def test_height_step_splits_in_two():
    mask = np.ones((20, 40), bool)
    dsm = np.full(mask.shape, 105.0)
    dsm[:, 20:] = 110.0
    labels = gradient_presplit(mask, dsm)
    assert set(np.unique(labels)) == {1, 2}
    assert (labels[:, :19] == labels[0, 0]).all()
    assert (labels[:, 21:] == labels[0, -1]).all()
    assert labels[0, 0] != labels[0, -1]


def test_gradient_threshold_is_strict():
    mask = np.ones((20, 40), bool)
    dsm = np.tile(np.arange(40, dtype=float), (20, 1))  # exactly 1 m/px everywhere
    assert set(np.unique(gradient_presplit(mask, dsm, threshold=1.0))) == {1}


# inner rectangles

def test_solid_square_is_one_rectangle():
    assert extract_max_inner_rectangles(np.ones((16, 16), bool)) == [(0, 0, 16, 16)]


def test_l_shape_two_rectangles():
    mask = np.zeros((40, 40), bool)
    mask[:, :16] = True
    mask[24:, :] = True
    rects = extract_max_inner_rectangles(mask)
    assert len(rects) == 2
    cover = np.zeros_like(mask)
    for r0, c0, r1, c1 in rects:
        cover[r0:r1, c0:c1] = True
    assert (cover & mask).sum() >= 0.95 * mask.sum()
    assert not (cover & ~mask).any()


def test_empty_mask():
    assert extract_max_inner_rectangles(np.zeros((8, 8), bool)) == []
    assert largest_inner_rectangle(np.zeros((8, 8), bool)) == (None, 0)


def test_largest_rectangle_matches_brute_force(rng):
    for _ in range(1000):
        h, w = rng.integers(1, 21, 2)
        mask = rng.random((h, w)) < rng.uniform(0.4, 0.95)
        rect, area = largest_inner_rectangle(mask)
        assert area == brute_force_max_rectangle_area(mask)
        if rect is not None:
            r0, c0, r1, c1 = rect
            assert mask[r0:r1, c0:c1].all() and (r1 - r0) * (c1 - c0) == area


@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_largest_rectangle_property(mask):
    assert largest_inner_rectangle(mask)[1] == brute_force_max_rectangle_area(mask)


# edge gap

def test_edge_gap_constant_and_step():
    dsm = np.full((10, 20), 100.0)
    a, b = (0, 0, 10, 10), (0, 10, 10, 20)
    assert compute_edge_gap(a, b, dsm) == 0.0
    dsm[:, 10:] += 1.0
    assert compute_edge_gap(a, b, dsm) == pytest.approx(1.0)


def test_edge_gap_requires_adjacency():
    with pytest.raises(NotAdjacent):
        compute_edge_gap((0, 0, 5, 5), (0, 6, 5, 10), np.zeros((10, 10)))
    with pytest.raises(NotAdjacent):
        compute_edge_gap((0, 0, 5, 5), (5, 5, 10, 10), np.zeros((10, 10)))  # corner only


def test_edge_gap_matches_rescan(rng):
    for _ in range(200):
        dsm = rng.normal(100, 2, (30, 30))
        dsm[rng.random(dsm.shape) < 0.05] = np.nan
        r0, r1 = sorted(rng.choice(np.arange(0, 31), 2, replace=False))
        split = int(rng.integers(1, 29))
        w0, w1 = int(rng.integers(1, split + 1)), int(rng.integers(1, 31 - split))
        a = (int(r0), split - w0, int(r1), split)
        s0 = int(rng.integers(0, 30))
        s1 = int(rng.integers(s0 + 1, 31))
        b = (s0, split, s1, split + w1)
        if min(a[2], b[2]) - max(a[0], b[0]) < 1:
            continue
        if rng.random() < 0.5:  # exercise the horizontal-edge branch too
            a, b, dsm = (a[1], a[0], a[3], a[2]), (b[1], b[0], b[3], b[2]), dsm.T.copy()
        assert compute_edge_gap(a, b, dsm) == pytest.approx(edge_gap_rescan(a, b, dsm), abs=1e-9)
        assert compute_edge_gap(b, a, dsm) == pytest.approx(edge_gap_rescan(a, b, dsm), abs=1e-9)


# merge rule

@pytest.mark.parametrize("c_ok", [True, False])
@pytest.mark.parametrize("h_ok", [True, False])
@pytest.mark.parametrize("g_ok", [True, False])
def test_merge_truth_table(c_ok, h_ok, g_ok):
    f = _features(5 if c_ok else 15, 0.2 if h_ok else 0.8, 0.05 if g_ok else 0.2)
    assert should_merge(f) == (c_ok and h_ok and g_ok)


def test_merge_boundaries_are_strict():
    assert not should_merge(_features(10.0, 0.2, 0.05))
    assert not should_merge(_features(5.0, 0.5, 0.05))
    assert not should_merge(_features(5.0, 0.2, 0.1))
    assert should_merge(_features(9.999, 0.499, 0.0999))


def test_colour_difference_is_mean_absolute_band_difference():
    f = MergeFeatures(np.array([10.0, 20, 30]), np.array([13.0, 14, 30]), 0, 0, 0)
    assert f.color_diff == pytest.approx(3.0)


def _split_scene(step):
    dsm = np.full((20, 40), 100.0)
    dsm[:, 20:] += step
    ortho = np.full((20, 40, 3), 120, np.uint8)
    return dsm, ortho


def test_flat_halves_merge_and_stepped_halves_do_not():
    rects = [(0, 0, 20, 20), (0, 20, 20, 40)]
    assert merge_adjacent_rects(rects, *_split_scene(0.0)) == [(0, 0, 20, 40)]
    assert merge_adjacent_rects(rects, *_split_scene(2.0)) == rects


def test_misaligned_pair_is_not_merged():
    dsm, ortho = _split_scene(0.0)
    rects = [(0, 0, 20, 20), (0, 20, 8, 40)]
    assert merge_adjacent_rects(rects, dsm, ortho) == rects


def test_merge_is_monotone_and_deterministic(rng):
    for _ in range(50):
        dsm = 100 + np.round(rng.random((24, 24)) * 0.1, 2)
        ortho = np.full((24, 24, 3), 90, np.uint8)
        cuts = sorted(set(rng.integers(1, 24, 3).tolist()))
        bounds = [0] + cuts + [24]
        rects = [(0, bounds[i], 24, bounds[i + 1]) for i in range(len(bounds) - 1)]
        out = merge_adjacent_rects(rects, dsm, ortho, T_h2=0.3)
        assert len(out) <= len(rects)
        assert out == merge_adjacent_rects(rects, dsm, ortho, T_h2=0.3)


# whole-segment decomposition

def _footprint(kind, theta, shape=(120, 120)):
    c, s = math.cos(theta), math.sin(theta)

    def at(lx, ly):
        return 60 + lx * c - ly * s, 60 + lx * s + ly * c

    parts = {"rect": [(0, 0, 70, 30)],
             "L": [(0, -10, 70, 24), (-26, 14, 18, 36)],
             "T": [(0, -12, 80, 22), (0, 14, 22, 34)]}[kind]
    mask = np.zeros(shape, bool)
    for lx, ly, ln, wd in parts:
        mask |= OrientedRect(*at(lx, ly), ln, wd, theta).rasterize(shape)
    return mask


@pytest.mark.parametrize("kind", ["rect", "L", "T"])
@pytest.mark.parametrize("deg", [0, 20, 45, 70])
def test_decomposition_covers_mask(kind, deg):
    mask = _footprint(kind, math.radians(deg))
    seg = _segment(mask)
    dsm = np.where(mask, 108.0, 100.0)
    ortho = np.full(mask.shape + (3,), 150, np.uint8)
    dec = decompose_segment(seg, math.radians(deg), dsm, ortho)
    cover = np.zeros_like(mask)
    mys, mxs = np.nonzero(mask)
    for r in dec.rects:
        raster = r.rasterize(mask.shape)
        cover |= raster
        outside_y, outside_x = np.nonzero(raster & ~mask)
        for y, x in zip(outside_y, outside_x):
            assert np.min(np.hypot(mxs - x, mys - y)) <= 2.0
    assert (cover & mask).sum() >= 0.90 * mask.sum()
    again = decompose_segment(seg, math.radians(deg), dsm, ortho)
    assert again.rects == dec.rects
