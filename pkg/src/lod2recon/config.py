"""Reconstruction parameters and their validation."""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

from .errors import ConfigOutOfRange

# tunable thresholds and their accepted closed ranges
RANGES = {
    "T_l": (45.0, 150.0),  # line length (px) separating main from minor edges
    "T_d": (6.0, 20.0),  # mean colour difference (RGB levels) for merging
    "T_h1": (0.5, 1.5),  # mean height difference (m) for merging
    "T_h2": (0.1, 0.3),  # height jump across a shared edge (m) for merging
}


@dataclass(frozen=True)
class Config:
    T_l: float = 90.0
    T_d: float = 10.0
    T_h1: float = 0.5
    T_h2: float = 0.1
    # segmentation
    min_area: int = 50
    fallback_ground_m: float | None = None  # default: 5th percentile of the DSM
    fallback_min_height_m: float = 2.0
    # polygon
    eps_dp: float = 2.0
    orientation_bin_deg: float = 5.0
    jog_tol: float = 5.0
    use_image_lines: bool = True
    line_dist_tol: float = 5.0
    line_angle_tol_deg: float = 10.0
    line_min_length: float = 10.0
    # rectangles
    grad_threshold: float = 1.0
    pyramid_levels: int = 3
    coverage: float = 0.95
    min_rect_area: int = 4
    edge_depth: int = 3
    merge_align_tol: int = 2
    # roads
    d_max_m: float = 30.0
    tol_deg: float = 10.0
    # roofs
    z_step: float = 0.25
    hipl_fracs: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    hipw_fracs: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    min_fit_cells: int = 16
    kind_tol_m: float = 0.005
    base_ring_px: int = 3
    base_percentile: float = 5.0
    min_wall_m: float = 0.5
    # meshing
    iou_thresh: float = 0.65
    area_thresh: float = 5000.0
    max_faces: int = 1000
    # scene
    gsd_m: float = 0.5  # used when no world file is given
    max_input_px: int = 5000
    workers: int = 1

    def to_dict(self):
        return dataclasses.asdict(self)


_DEFAULTS = Config()
_FIELDS = {f.name for f in dataclasses.fields(Config)}
# parameters that are counts, sizes or switches rather than free thresholds
_NO_DRIFT_WARNING = {"fallback_ground_m", "use_image_lines", "workers", "max_input_px",
                     "hipl_fracs", "hipw_fracs", "pyramid_levels"}


def _fmt(v):
    return f"{v:g}"


def validate_config(raw=None) -> Config:
    """Build a :class:`Config` from a mapping, filling defaults.

    The four merge/line thresholds must lie inside their closed ranges; other
    parameters are accepted as given, with a warning when they stray more than
    a factor of ten from their defaults.
    """
    raw = dict(raw or {})
    unknown = sorted(set(raw) - _FIELDS)
    if unknown:
        raise ConfigOutOfRange(f"unknown parameter(s): {', '.join(unknown)}")
    for name, (lo, hi) in RANGES.items():
        if name not in raw:
            continue
        try:
            value = float(raw[name])
        except (TypeError, ValueError):
            raise ConfigOutOfRange(f"{name} = {raw[name]!r} is not a number; allowed range "
                                   f"[{_fmt(lo)}, {_fmt(hi)}]") from None
        if not lo <= value <= hi:
            raise ConfigOutOfRange(f"{name} = {_fmt(value)} outside allowed range "
                                   f"[{_fmt(lo)}, {_fmt(hi)}]")
        raw[name] = value
    for name, value in raw.items():
        if name in RANGES or name in _NO_DRIFT_WARNING:
            continue
        default = getattr(_DEFAULTS, name)
        if isinstance(default, (int, float)) and not isinstance(default, bool) and default and value:
            ratio = abs(float(value) / float(default))
            if ratio > 10 or ratio < 0.1:
                warnings.warn(f"{name} = {value} is far from its default {default}", stacklevel=2)
    if "hipl_fracs" in raw:
        raw["hipl_fracs"] = tuple(raw["hipl_fracs"])
    if "hipw_fracs" in raw:
        raw["hipw_fracs"] = tuple(raw["hipw_fracs"])
    return Config(**raw)
