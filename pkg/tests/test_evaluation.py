import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lod2recon.errors import DimensionMismatch, EmptyReference
from lod2recon.evaluation import column_voxels, iou2, iou3, metric_report, render_models
from lod2recon.rectangles import OrientedRect
from lod2recon.roofs import RoofModel, RoofParams

from oracles import iou2_enumerate, iou3_enumerate


def _random_heights(rng, shape, ground):
    h = ground + rng.uniform(-1, 8, shape)
    h[rng.random(shape) < 0.3] = np.nan
    return h


def test_iou2_matches_enumeration(rng):
    for _ in range(200):
        shape = tuple(rng.integers(1, 30, 2))
        pred = rng.random(shape) < rng.random()
        ref = rng.random(shape) < rng.random()
        ref.flat[0] = True
        assert abs(iou2(pred, ref) - iou2_enumerate(pred, ref)) <= 1e-12


def test_iou3_matches_voxel_enumeration(rng):
    for _ in range(200):
        shape = tuple(rng.integers(1, 12, 2))
        ground = 100.0
        pred, ref = _random_heights(rng, shape, ground), _random_heights(rng, shape, ground)
        ref.flat[0] = ground + 5
        vh = float(rng.choice([0.5, 0.25, 1.0]))
        assert abs(iou3(pred, ref, ground, vh) - iou3_enumerate(pred, ref, ground, vh)) <= 1e-12


def test_identical_disjoint_half():
    ref = np.zeros((10, 10), bool)
    ref[2:8, 2:8] = True
    assert iou2(ref, ref) == 1.0
    assert iou2(~ref, ref) == 0.0
    half = ref.copy()
    half[2:5] = False
    assert iou2(half, ref) == 0.5
    h = np.where(ref, 108.0, np.nan)
    assert iou3(h, h, 100.0) == 1.0
    assert iou3(np.where(~ref, 108.0, np.nan), h, 100.0) == 0.0
    assert iou3(np.where(ref, 104.0, np.nan), h, 100.0) == 0.5


def test_errors():
    with pytest.raises(EmptyReference):
        iou2(np.ones((3, 3)), np.zeros((3, 3)))
    with pytest.raises(EmptyReference):
        iou3(np.full((3, 3), 105.0), np.full((3, 3), 100.0), 100.0)
    with pytest.raises(DimensionMismatch):
        iou2(np.ones((3, 3)), np.ones((3, 4)))


@given(arrays(bool, (6, 6)), arrays(bool, (6, 6)))
def test_iou2_symmetric_and_bounded(a, b):
    if not (a.any() and b.any()):
        return
    assert iou2(a, b) == iou2(b, a)
    assert 0.0 <= iou2(a, b) <= 1.0


@given(arrays(float, (5, 5), elements=st.floats(99, 110)),
       arrays(float, (5, 5), elements=st.floats(99, 110)))
def test_iou3_symmetric_and_bounded(a, b):
    if not (column_voxels(a, 100.0).any() and column_voxels(b, 100.0).any()):
        return
    assert iou3(a, b, 100.0) == iou3(b, a, 100.0)
    assert 0.0 <= iou3(a, b, 100.0) <= 1.0


def test_iou3_stabilises_as_voxels_shrink(rng):
    ground = 100.0
    errors = {0.5: [], 0.25: [], 0.125: []}
    for _ in range(100):
        a = ground + rng.uniform(0, 10, (8, 8))
        b = ground + rng.uniform(0, 10, (8, 8))
        # continuous volume IoU of piecewise-constant columns
        exact = np.minimum(a - ground, b - ground).sum() / np.maximum(a - ground, b - ground).sum()
        for vh in errors:
            errors[vh].append(abs(iou3(a, b, ground, vh) - exact))
    means = [np.mean(errors[vh]) for vh in (0.5, 0.25, 0.125)]
    assert means[0] >= means[1] >= means[2]
    assert means[2] < 0.01


def test_column_voxel_rounding():
    assert column_voxels(np.array([100.0, 100.24, 100.25, 100.74, 100.75, 99.0, np.nan]),
                         100.0, 0.5).tolist() == [0, 0, 1, 1, 2, 0, 0]


def test_render_models_and_report():
    m = RoofModel(OrientedRect(10.0, 10.0, 10.0, 6.0, 0.0), "Flat", RoofParams(105.0, 105.0), 0.0, 100.0)
    mask, h = render_models([m], (20, 20))
    assert mask.sum() == 11 * 7
    assert np.all(h[mask] == 105.0) and np.isnan(h[~mask]).all()
    table = metric_report([("a", 0.9, 0.8)])
    assert table.header == ["scene", "IOU2", "IOU3"] and table.rows == [["a", 0.9, 0.8]]
