"""Write a scene to disk the way real inputs arrive, then reconstruct it with the CLI.

Run with ``python3 demos/03_command_line.py``.
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from lod2recon import geodata_io as gio
from lod2recon.roofs import KINDS
from lod2recon.synthetic import generate_scene, random_layout

work = Path(tempfile.mkdtemp(prefix="lod2_cli_"))

# %% rasters with a north-up world file and one road along the top of the first building
geo = gio.GeoTransform(0.5, 0.0, 0.0, -0.5, 500000.25, 5200000.75)
spec = random_layout({k: 2 for k in KINDS}, (512, 512), seed=3)
syn = generate_scene(spec, (512, 512), noise_sigma_m=0.1, seed=3, geo=geo)
x, y = geo.pixel_to_world(spec[0].rect.cx, spec[0].rect.cy - 35)
syn.scene.roads = gio.RoadNetwork([[(float(x) - 80, float(y) + 3), (float(x) + 80, float(y) - 3)]])
paths = gio.save_scene(syn.scene, work / "in")
for key, p in paths.items():
    if p is not None:
        print(f"{key:>15}: {p.name}")

# %% one invocation with the default thresholds
argv = [sys.executable, "-m", "lod2recon.cli",
        "--ortho", str(paths["ortho_path"]), "--dsm", str(paths["dsm_path"]),
        "--classmap", str(paths["classmap_path"]), "--roads", str(paths["roads_path"]),
        "--worldfile", str(paths["worldfile_path"]), "--out", str(work / "out")]
done = subprocess.run(argv, capture_output=True, text=True)
print("\nexit code", done.returncode)
print("progress (first lines):", *done.stderr.splitlines()[:4], sep="\n  ")
print("stdout:", done.stdout.strip())

# %% what the run left behind
files = sorted(p.name for p in (work / "out").iterdir())
stages = sorted({name.split("_")[0] for name in files if "_" in name})
print(f"\n{len(files)} files; stages: {', '.join(stages)}")
summary = json.loads((work / "out" / "summary.json").read_text())
for seg in summary["segments"]:
    print(f"  segment {seg['id']}: {seg['decision']}, {seg['rectangles']} rectangle(s), "
          f"{'/'.join(seg['kinds'])}, {seg['faces']} faces")

# %% thresholds outside their ranges are refused with a one-line JSON error
bad = subprocess.run(argv[:-2] + ["--out", str(work / "bad"), "--td", "25"],
                     capture_output=True, text=True)
print("\nexit code", bad.returncode, "error:", bad.stderr.strip().splitlines()[-1])
