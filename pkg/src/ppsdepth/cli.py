"""Command-line interface.

Subcommands: render, pps, mask, refine, eval, cloud, selfcheck.  All
outputs are deterministic given the same inputs and flags; errors print
a diagnostic to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config
from .fileio import (
    export_pointcloud,
    falsecolor,
    read_depth,
    read_image,
    write_depth,
    write_image,
)
from .geometry import pps_from_depth
from .losses import depth_metrics
from .photometrics import luminance, render, specular_mask, SPECULAR_THRESHOLD
from .refine import refine_depth
from .scenes import generate_scene
from .selfcheck import run_selfcheck

__all__ = ["main"]


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_render(args) -> int:
    cfg = load_config(args.config)
    K = cfg.require_camera()
    spec = cfg.require_scene()
    out = _out_dir(args, cfg)
    depth, albedo = generate_scene(spec, K)
    result = render(depth, K, cfg.light, albedo, cfg.render)
    write_image(out / "image.png", result.image)
    write_depth(out / "depth_gt.pfm", depth)
    write_image(out / "albedo_gt.png", albedo, bits=16 if args.deep else 8)
    if result.clamped.any():
        print(
            f"warning: {int(result.clamped.sum())} pixel(s) saturated during rendering",
            file=sys.stderr,
        )
    print(f"wrote {out / 'image.png'}, {out / 'depth_gt.pfm'}, {out / 'albedo_gt.png'}")
    return 0


def _cmd_pps(args) -> int:
    cfg = load_config(args.config)
    K = cfg.require_camera()
    depth = read_depth(args.depth)
    if depth.shape != K.shape:
        raise ValueError(f"depth {depth.shape} does not match configured camera {K.shape}")
    out = _out_dir(args, cfg)
    field = pps_from_depth(depth, K, cfg.light)
    write_depth(out / "pps.pfm", np.maximum(field.pps, np.finfo(np.float32).tiny))
    write_image(out / "pps.png", falsecolor(field.pps, mask=field.valid))
    print(f"wrote {out / 'pps.pfm'}, {out / 'pps.png'}")
    return 0


def _cmd_mask(args) -> int:
    img = read_image(args.image)
    gray = luminance(img) if img.ndim == 3 else img
    m = specular_mask(gray, threshold=args.threshold)
    if not m.any():
        print("warning: mask is empty (every pixel is at or above the threshold)", file=sys.stderr)
    out_path = Path(args.out) if args.out else Path(args.image).with_suffix(".mask.png")
    write_image(out_path, m.astype(np.float64))
    print(f"wrote {out_path} ({int(m.sum())} valid of {m.size} pixels)")
    return 0


def _cmd_refine(args) -> int:
    cfg = load_config(args.config)
    K = cfg.require_camera()
    init_depth = read_depth(args.init_depth)
    image = read_image(args.image)
    gray = luminance(image) if image.ndim == 3 else image
    if init_depth.shape != K.shape or gray.shape != K.shape:
        raise ValueError(
            f"depth {init_depth.shape} / image {gray.shape} do not match camera {K.shape}"
        )
    rc = cfg.refine
    if args.iters is not None or args.step is not None:
        overrides = {}
        if args.iters is not None:
            overrides["max_iters"] = args.iters
        if args.step is not None:
            overrides["step_size"] = args.step
        rc = dataclasses.replace(rc, **overrides)
    mask = specular_mask(gray)
    result = refine_depth(init_depth, gray, K, cfg.light, mask, rc)
    out = _out_dir(args, cfg)
    write_depth(out / "refined.pfm", result.refined)
    trace_path = out / "loss_trace.csv"
    with open(trace_path, "w", encoding="ascii") as fh:
        fh.write("iteration,loss\n")
        for i, val in enumerate(result.loss_trace):
            fh.write(f"{i},{val:.17g}\n")
    print(
        f"wrote {out / 'refined.pfm'}, {trace_path} "
        f"({result.iterations_used} iterations, converged={result.converged})"
    )
    return 0


def _cmd_eval(args) -> int:
    pred = read_pfm_lenient(args.pred)
    gt = read_depth(args.gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} shapes differ")
    if args.mask is not None:
        m = read_image(args.mask) > 0.5
    else:
        m = np.ones_like(gt, dtype=bool)
    report = depth_metrics(pred, gt, m, align=args.align)
    print(report.to_text())
    if args.json is not None:
        Path(args.json).write_text(report.to_json() + "\n", encoding="ascii")
        print(f"wrote {args.json}")
    return 0


def read_pfm_lenient(path) -> np.ndarray:
    """Prediction maps may contain non-positive values; metrics handle them."""
    from .fileio import read_pfm

    arr = read_pfm(path).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: prediction contains non-finite values")
    return arr


def _cmd_cloud(args) -> int:
    cfg = load_config(args.config)
    K = cfg.require_camera()
    depth = read_depth(args.depth)
    if depth.shape != K.shape:
        raise ValueError(f"depth {depth.shape} does not match configured camera {K.shape}")
    color = None
    if args.image is not None:
        color = read_image(args.image)
        if color.ndim != 3 or color.shape[:2] != depth.shape:
            raise ValueError("color image must be RGB with the same dimensions as the depth map")
    if args.mask is not None:
        mask = read_image(args.mask) > 0.5
    else:
        mask = np.ones_like(depth, dtype=bool)
    out_path = Path(args.out) if args.out else Path(args.depth).with_suffix(".ply")
    cloud = export_pointcloud(depth, K, mask, out_path, color=color, binary=not args.ascii)
    print(f"wrote {out_path} ({len(cloud)} vertices)")
    return 0


def _cmd_selfcheck(args) -> int:
    t0 = time.perf_counter()
    results = run_selfcheck()
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name}: {res.detail}")
        failed += 0 if res.passed else 1
    total = time.perf_counter() - t0
    print(f"{len(results) - failed}/{len(results)} checks passed in {total:.2f}s")
    return 0 if failed == 0 else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppsdepth",
        description="Near-field shading toolkit: synthetic rendering, shading losses, depth refinement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a synthetic scene from a config")
    p.add_argument("config")
    p.add_argument("-o", "--out", help="output directory (default: config paths.output_dir)")
    p.add_argument("--deep", action="store_true", help="write the albedo as 16-bit")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("pps", help="per-pixel shading field from a depth map")
    p.add_argument("depth", help="input depth map (PFM)")
    p.add_argument("config")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_pps)

    p = sub.add_parser("mask", help="specular validity mask from an image")
    p.add_argument("image")
    p.add_argument("--threshold", type=float, default=SPECULAR_THRESHOLD)
    p.add_argument("-o", "--out", help="output PNG path")
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("refine", help="shading-driven depth refinement")
    p.add_argument("init_depth", help="initial depth map (PFM)")
    p.add_argument("image", help="target image (PNG/PPM/PGM)")
    p.add_argument("config")
    p.add_argument("--iters", type=int, help="override refine.max_iters")
    p.add_argument("--step", type=float, help="override refine.step_size")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="depth metrics between prediction and ground truth")
    p.add_argument("pred", help="predicted depth (PFM)")
    p.add_argument("gt", help="ground-truth depth (PFM)")
    p.add_argument("--align", choices=("none", "ssi"), default="none")
    p.add_argument("--mask", help="optional validity mask image")
    p.add_argument("--json", help="also write the report as JSON to this path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cloud", help="export a depth map as a PLY point cloud")
    p.add_argument("depth", help="input depth map (PFM)")
    p.add_argument("config")
    p.add_argument("--image", help="optional RGB image for vertex colors")
    p.add_argument("--mask", help="optional validity mask image")
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY instead of binary")
    p.add_argument("-o", "--out", help="output PLY path (default: depth path with .ply)")
    p.set_defaults(func=_cmd_cloud)

    p = sub.add_parser("selfcheck", help="run the analytic invariant suite")
    p.set_defaults(func=_cmd_selfcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
