"""Synthetic scenes with known parametric buildings.

Roof heights here are evaluated pixel by pixel with plain ``math`` so the
generator stays an independent reference for the vectorised fitting code.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OverlapError
from .geodata_io import GeoTransform, RoadNetwork, Scene
from .rectangles import OrientedRect
from .roofs import RoofModel, RoofParams


@dataclass
class BuildingSpec:
    rect: OrientedRect  # scene pixels
    kind: str
    params: RoofParams  # absolute heights in metres
    color: tuple = (200, 60, 60)


@dataclass
class SyntheticScene:
    scene: Scene
    buildings: list
    truth_models: list  # RoofModel per building, same order
    truth_heights: np.ndarray  # noise-free DSM
    labels: np.ndarray  # 0 ground, i + 1 for buildings[i]
    ground_z: float
    gsd_m: float

    @property
    def footprint(self) -> np.ndarray:
        return self.labels > 0


def _inf_div(num, den):
    return math.inf if den <= 0 else num / den


def naive_local(rect: OrientedRect, x, y):
    """Local (along, across) coordinates of a scene point, from first principles."""
    c, s = math.cos(rect.theta), math.sin(rect.theta)
    dx, dy = x - rect.cx, y - rect.cy
    return dx * c + dy * s + rect.length / 2, -dx * s + dy * c + rect.width / 2


def naive_inside(rect: OrientedRect, x, y, tol=1e-9):
    lx, ly = naive_local(rect, x, y)
    return -tol <= lx <= rect.length + tol and -tol <= ly <= rect.width + tol


def naive_roof_height(kind, params: RoofParams, rect: OrientedRect, x, y, gsd_m=0.5):
    """Roof height at one scene point, written out case by case."""
    lx, ly = naive_local(rect, x, y)
    L, W = rect.length * gsd_m, rect.width * gsd_m
    lx = min(max(lx, 0.0), rect.length) * gsd_m
    ly = min(max(ly, 0.0), rect.width) * gsd_m
    if kind == "Flat":
        s = 0.0
    elif kind == "Gable":
        s = 1.0 - abs(2.0 * ly / W - 1.0)
    elif kind == "Pyramid":
        s = min(2 * ly / W, 2 * (W - ly) / W, 2 * lx / L, 2 * (L - lx) / L)
    elif kind == "Hip":
        s = min(2 * ly / W, 2 * (W - ly) / W,
                _inf_div(lx, params.hipl), _inf_div(L - lx, params.hipl))
    elif kind == "Mansard":
        s = min(1.0, _inf_div(lx, params.hipl), _inf_div(L - lx, params.hipl),
                _inf_div(ly, params.hipw), _inf_div(W - ly, params.hipw))
    else:
        raise ValueError(f"unknown roof kind {kind!r}")
    s = min(max(s, 0.0), 1.0)
    return params.z_eave + (params.z_ridge - params.z_eave) * s


def _pixel_box(rect: OrientedRect, shape):
    c, s = math.cos(rect.theta), math.sin(rect.theta)
    hl, hw = rect.length / 2, rect.width / 2
    xs = [rect.cx + a * c - b * s for a in (-hl, hl) for b in (-hw, hw)]
    ys = [rect.cy + a * s + b * c for a in (-hl, hl) for b in (-hw, hw)]
    r0 = max(int(math.floor(min(ys))), 0)
    r1 = min(int(math.ceil(max(ys))) + 1, shape[0])
    c0 = max(int(math.floor(min(xs))), 0)
    c1 = min(int(math.ceil(max(xs))) + 1, shape[1])
    return r0, c0, r1, c1


def generate_scene(spec, shape=(256, 256), gsd_m=0.5, noise_sigma_m=0.1, seed=0,
                   ground_z=100.0, ground_color=(110, 110, 100), geo: GeoTransform | None = None,
                   roads: RoadNetwork | None = None) -> SyntheticScene:
    """Render buildings into DSM, orthophoto and classification map.

    ``spec`` is a list of :class:`BuildingSpec`.  Gaussian noise with the given
    sigma is added to the whole DSM from a generator seeded with ``seed``.
    """
    h, w = shape
    truth = np.full(shape, float(ground_z))
    labels = np.zeros(shape, dtype=np.int32)
    ortho = np.empty((h, w, 3), dtype=np.uint8)
    ortho[:] = np.asarray(ground_color, dtype=np.uint8)
    models = []
    for i, b in enumerate(spec, start=1):
        r0, c0, r1, c1 = _pixel_box(b.rect, shape)
        for r in range(r0, r1):
            for c in range(c0, c1):
                if not naive_inside(b.rect, c, r):
                    continue
                if labels[r, c]:
                    raise OverlapError(f"building {i} overlaps building {labels[r, c]} at pixel ({r}, {c})")
                labels[r, c] = i
                truth[r, c] = naive_roof_height(b.kind, b.params, b.rect, c, r, gsd_m)
                ortho[r, c] = b.color
        models.append(RoofModel(b.rect, b.kind, b.params, 0.0, float(ground_z), gsd_m))
    rng = np.random.default_rng(seed)
    dsm = truth + rng.normal(0.0, noise_sigma_m, shape) if noise_sigma_m > 0 else truth.copy()
    classmap = (labels > 0).astype(np.uint8)
    scene = Scene(ortho=ortho, dsm=dsm, classmap=classmap, geo=geo, roads=roads)
    return SyntheticScene(scene, list(spec), models, truth, labels, float(ground_z), gsd_m)


# --------------------------------------------------------------------------
# random layouts
# --------------------------------------------------------------------------

@dataclass
class LayoutLimits:
    length_px: tuple = (40, 80)
    width_px: tuple = (24, 50)
    eave_above_ground_m: tuple = (4.0, 12.0)
    slope: tuple = (0.3, 0.7)  # rise per horizontal metre
    hip_frac: tuple = (0.2, 0.4)
    mansard_frac: tuple = (0.15, 0.35)
    gap_px: int = 8
    kinds: tuple = ("Flat", "Gable", "Hip", "Pyramid", "Mansard")
    colors: list = field(default_factory=lambda: [
        (200, 60, 60), (60, 160, 70), (70, 90, 200), (210, 180, 60), (160, 80, 170),
        (60, 180, 190), (230, 130, 50), (140, 140, 220)])


def random_params(kind, length_px, width_px, rng, ground_z, gsd_m, limits: LayoutLimits):
    L, W = length_px * gsd_m, width_px * gsd_m
    z_eave = ground_z + rng.uniform(*limits.eave_above_ground_m)
    slope = rng.uniform(*limits.slope)
    if kind == "Flat":
        return RoofParams(z_eave, z_eave)
    if kind == "Gable":
        return RoofParams(z_eave + slope * W / 2, z_eave)
    if kind == "Pyramid":
        return RoofParams(z_eave + slope * min(L, W) / 2, z_eave)
    if kind == "Hip":
        hipl = rng.uniform(*limits.hip_frac) * L
        return RoofParams(z_eave + slope * min(W / 2, hipl), z_eave, hipl, 0.0)
    hipl = rng.uniform(*limits.mansard_frac) * L
    hipw = rng.uniform(*limits.mansard_frac) * W
    return RoofParams(z_eave + slope * min(hipl, hipw), z_eave, hipl, hipw)


def random_layout(counts, shape, seed=0, ground_z=100.0, gsd_m=0.5, limits: LayoutLimits | None = None,
                  max_tries=20000):
    """Place non-overlapping random buildings; ``counts`` maps kind -> number."""
    limits = limits or LayoutLimits()
    rng = np.random.default_rng(seed)
    occupied = np.zeros(shape, dtype=bool)
    spec = []
    wanted = [k for k in limits.kinds for _ in range(counts.get(k, 0))]
    for kind in wanted:
        for _ in range(max_tries):
            length = float(rng.integers(limits.length_px[0], limits.length_px[1] + 1))
            width = float(rng.integers(limits.width_px[0], min(limits.width_px[1], length) + 1))
            theta = float(rng.uniform(0, math.pi))
            half = math.hypot(length, width) / 2 + limits.gap_px + 2
            cx = float(rng.uniform(half, shape[1] - half))
            cy = float(rng.uniform(half, shape[0] - half))
            rect = OrientedRect(cx, cy, length, width, theta)
            grown = OrientedRect(cx, cy, length + 2 * limits.gap_px, width + 2 * limits.gap_px, theta)
            r0, c0, r1, c1 = grown.bbox(shape)
            ys, xs = np.mgrid[r0:r1, c0:c1]
            cover = grown.contains(xs, ys)
            if (occupied[r0:r1, c0:c1] & cover).any():
                continue
            occupied[r0:r1, c0:c1] |= cover
            params = random_params(kind, length, width, rng, ground_z, gsd_m, limits)
            color = limits.colors[len(spec) % len(limits.colors)]
            spec.append(BuildingSpec(rect, kind, params, tuple(int(c) for c in color)))
            break
        else:
            raise OverlapError(f"could not place a {kind} building without overlap")
    return spec


# --------------------------------------------------------------------------
# JSON scene description
# --------------------------------------------------------------------------

def spec_to_json(spec, **scene_kwargs) -> str:
    buildings = [{
        "cx": b.rect.cx, "cy": b.rect.cy, "len": b.rect.length, "wid": b.rect.width,
        "theta_deg": math.degrees(b.rect.theta), "kind": b.kind,
        "z_ridge": b.params.z_ridge, "z_eave": b.params.z_eave,
        "hipl": b.params.hipl, "hipw": b.params.hipw, "color": list(b.color),
    } for b in spec]
    doc = dict(scene_kwargs)
    doc["buildings"] = buildings
    return json.dumps(doc, indent=2, sort_keys=True)


def spec_from_json(text):
    """Inverse of :func:`spec_to_json`: returns (spec, other scene keys)."""
    doc = json.loads(text)
    spec = []
    for b in doc.pop("buildings", []):
        rect = OrientedRect(b["cx"], b["cy"], b["len"], b["wid"], math.radians(b["theta_deg"]))
        params = RoofParams(b["z_ridge"], b["z_eave"], b.get("hipl", 0.0), b.get("hipw", 0.0))
        spec.append(BuildingSpec(rect, b["kind"], params, tuple(b.get("color", (200, 60, 60)))))
    return spec, doc
