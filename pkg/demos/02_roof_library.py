"""The five roof kinds: their height profiles, their meshes, and how fitting tells them apart.

Run with ``python3 demos/02_roof_library.py``.
"""
import math

import numpy as np

from lod2recon.mesh import model_to_mesh
from lod2recon.rectangles import OrientedRect
from lod2recon.roofs import KINDS, RoofModel, RoofParams, fit_roof, synthesize_roof_height

gsd = 0.5
rect = OrientedRect(40.0, 30.0, 48.0, 28.0, 0.0)  # 24 m x 14 m, axis aligned
L, W = rect.length * gsd, rect.width * gsd
params = {
    "Flat": RoofParams(108.0, 108.0),
    "Gable": RoofParams(112.0, 108.0),
    "Pyramid": RoofParams(112.0, 108.0),
    "Hip": RoofParams(112.0, 108.0, hipl=0.3 * L),
    "Mansard": RoofParams(112.0, 108.0, hipl=0.2 * L, hipw=0.2 * W),
}

# %% a long and a cross section through each roof
for kind in KINDS:
    field = synthesize_roof_height(kind, params[kind], rect, (0, 0, 60, 80), gsd)
    along = field[30, 16:65:6]
    across = field[16:45:4, 40]
    print(f"{kind:>8}  along {np.array2string(along, precision=1)}")
    print(f"{'':>8}  across {np.array2string(across, precision=1)}")

# %% closed meshes: every edge is shared by two triangles
print()
for kind in KINDS:
    mesh = model_to_mesh(RoofModel(rect, kind, params[kind], 0.0, 100.0, gsd))
    print(f"{kind:>8}: {mesh.face_count:>2} triangles, watertight {mesh.is_watertight()}, "
          f"volume {mesh.signed_volume() * gsd * gsd:.0f} m3")

# %% fit each kind back from a noisy DSM
rng = np.random.default_rng(1)
print(f"\n{'truth':>8} {'fitted':>8} {'z_ridge':>8} {'z_eave':>7} {'hipl':>5} {'hipw':>5} {'rmse':>6}")
for kind in KINDS:
    dsm = np.full((60, 80), 100.0)
    field = synthesize_roof_height(kind, params[kind], rect, (0, 0, 60, 80), gsd)
    dsm = np.where(np.isfinite(field), field, dsm) + rng.normal(0, 0.1, dsm.shape)
    m = fit_roof(rect, dsm, gsd_m=gsd)
    p = m.params
    print(f"{kind:>8} {m.kind:>8} {p.z_ridge:>8.2f} {p.z_eave:>7.2f} {p.hipl:>5.1f} "
          f"{p.hipw:>5.1f} {m.rmse:>6.3f}")

# %% a hip roof whose inset reaches the middle is the pyramid
hip = synthesize_roof_height("Hip", RoofParams(112.0, 108.0, hipl=L / 2), rect, gsd_m=gsd)
pyr = synthesize_roof_height("Pyramid", RoofParams(112.0, 108.0), rect, gsd_m=gsd)
print("\nhip with hipl = L/2 equals pyramid:", np.array_equal(hip, pyr, equal_nan=True))
print(f"ridge slope of the gable: {math.degrees(math.atan(4.0 / (W / 2))):.1f} degrees")
