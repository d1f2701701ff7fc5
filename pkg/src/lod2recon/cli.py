"""Command line front end: ``lod2recon --ortho a.ppm --dsm a.asc --out dir``."""
from __future__ import annotations

import argparse
import json
import sys

from .config import Config, validate_config
from .errors import ReconstructionError
from .pipeline import run_pipeline, stderr_progress

# flag -> Config field for the advanced parameters exposed on the command line
_ADVANCED = {
    "min_area": int, "eps_dp": float, "jog_tol": float, "grad_threshold": float,
    "coverage": float, "d_max_m": float, "tol_deg": float, "z_step": float,
    "iou_thresh": float, "area_thresh": float, "max_faces": int, "gsd_m": float,
    "fallback_ground_m": float, "fallback_min_height_m": float, "workers": int,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lod2recon",
        description="Reconstruct parametric building models from an orthophoto and a DSM.")
    p.add_argument("--ortho", required=True, help="orthophoto, binary PPM (P6)")
    p.add_argument("--dsm", required=True, help="surface model, ESRI ASCII grid")
    p.add_argument("--classmap", help="building mask, PGM (P5), building = 1 or 255")
    p.add_argument("--roads", help="road centre lines, one WKT LINESTRING per line")
    p.add_argument("--worldfile", help="six-line world file for the rasters")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tl", type=float, default=Config.T_l, help="main line length T_l, px [45, 150]")
    p.add_argument("--td", type=float, default=Config.T_d, help="colour difference T_d [6, 20]")
    p.add_argument("--th1", type=float, default=Config.T_h1, help="mean height difference T_h1, m [0.5, 1.5]")
    p.add_argument("--th2", type=float, default=Config.T_h2, help="edge height jump T_h2, m [0.1, 0.3]")
    p.add_argument("--no-image-lines", action="store_true",
                   help="skip aligning polygon edges to orthophoto lines")
    adv = p.add_argument_group("advanced")
    for name, kind in _ADVANCED.items():
        adv.add_argument("--" + name.replace("_", "-"), type=kind, default=None, dest=name)
    p.add_argument("--quiet", action="store_true", help="no progress lines on stderr")
    return p


def config_from_args(args) -> Config:
    raw = {"T_l": args.tl, "T_d": args.td, "T_h1": args.th1, "T_h2": args.th2}
    for name in _ADVANCED:
        value = getattr(args, name)
        if value is not None:
            raw[name] = value
    if args.no_image_lines:
        raw["use_image_lines"] = False
    return validate_config(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    paths = {"ortho_path": args.ortho, "dsm_path": args.dsm, "classmap_path": args.classmap,
             "roads_path": args.roads, "worldfile_path": args.worldfile}
    try:
        config = config_from_args(args)
        report = run_pipeline(paths, config, args.out,
                              progress=None if args.quiet else stderr_progress())
    except ReconstructionError as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2
    print(json.dumps({k: report.summary[k] for k in
                      ("buildings", "regular", "irregular", "total_faces")}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
