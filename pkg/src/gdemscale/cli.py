"""Command-line entry point ``gdemscale``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .camera import Pose
from .errors import ConfigError, GdemScaleError
from .evaluation import compute_metrics, emit_plots, emit_report
from .gdem import DEFAULT_DENSITY, densify_cloud, load_gdem, read_xyz, save_gdem
from .geodesy import GlobalShift
from .groundseg import PROFILES, RoughScaleParams, segment_ground
from .io import (
    load_intrinsics,
    load_poses,
    load_rough_params,
    read_pfm,
    write_mask_bits,
    write_mask_png,
    write_pfm,
)
from .pipeline import (
    PipelineConfig,
    Timer,
    frame_agl,
    load_pipeline_gdem,
    run_pipeline,
    scale_frame,
    timing_report,
)
from .projection import DEFAULT_RANGE, RangeMask
from .scaling import METHODS
from . import synth

LOG_ENV = "GDEMSCALE_LOG_LEVEL"

logger = logging.getLogger("gdemscale")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def _range(text: str) -> RangeMask:
    try:
        return RangeMask.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad range {text!r}: {exc}") from None


def _shift(text: str) -> GlobalShift:
    try:
        e, n, a = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected E,N,ALT") from None
    return GlobalShift(e, n, a)


def _pick_pose(path, frame_id: str | None) -> Pose:
    poses = load_poses(path)
    if not poses:
        raise ConfigError(f"no pose records in {path}")
    if frame_id is None:
        return poses[0]
    for p in poses:
        if p.frame_id == frame_id:
            return p
    raise ConfigError(f"frame {frame_id!r} not found in {path}")


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


# subcommands ---------------------------------------------------------------


def cmd_prepare_gdem(args) -> int:
    src = _require(args.input, "GDEM input")
    if src.suffix.lower() == ".tdgd":
        raw = load_gdem(src)
    else:
        raw, zone = read_xyz(src, geodetic=args.geodetic, zone=args.zone, shift=args.shift)
        if zone is not None:
            logger.info("projected to UTM zone %s", zone)
    cloud = raw if args.density <= 0 else densify_cloud(raw, args.density, args.seed)
    save_gdem(cloud, args.output)
    print(f"wrote {len(cloud)} points ({cloud.source_tag}) to {args.output}")
    return 0


def cmd_synth(args) -> int:
    if args.terrain == "plane":
        terrain = synth.plane()
    elif args.terrain == "slope":
        terrain = synth.slope(args.grade, args.slope_heading)
    elif args.terrain == "hills":
        terrain = synth.hills(args.amplitude, args.wavelength)
    else:
        terrain = synth.plane_with_boxes(synth.default_boxes())
    scene = synth.build_scene(
        terrain, n_frames=args.frames, width=args.width, height=args.height, agl=args.agl,
        pitch=args.pitch, s0=args.s0, t0=args.t0, noise=args.noise, gdem_spacing=args.gdem_spacing,
        gdem_noise=args.gdem_noise, seed=args.seed,
    )
    out = synth.write_scene(scene, args.output)
    print(f"wrote {len(scene.poses)} frames to {out}")
    return 0


def cmd_segment_ground(args) -> int:
    k = load_intrinsics(_require(args.intrinsics, "intrinsics"))
    pose = _pick_pose(_require(args.pose, "pose file"), args.frame_id)
    rough = RoughScaleParams(*load_rough_params(_require(args.rough_params, "rough parameters")))
    disp = read_pfm(_require(args.disparity, "disparity")).astype(np.float64)
    if pose.agl is None:
        if args.gdem is None:
            raise ConfigError("pose has no AGL; pass --gdem to derive it")
        pose = frame_agl(pose, load_gdem(_require(args.gdem, "GDEM")))
    info: dict = {}
    t0 = time.perf_counter()
    mask = segment_ground(disp, pose, k, rough, args.profile, args.csf_input_size, info=info)
    info["ms"] = 1e3 * (time.perf_counter() - t0)
    write_mask_png(args.output, mask)
    if args.bits:
        write_mask_bits(args.bits, mask)
    print(json.dumps({"frame_id": pose.frame_id, **info}, sort_keys=True))
    return 0


def cmd_scale(args) -> int:
    if args.method == "tandepth" and args.gdem is None:
        raise ConfigError("--gdem is required for the tandepth method")
    if args.method in ("median", "reference") and args.ref is None:
        raise ConfigError(f"--ref is required for the {args.method} method")
    out = Path(args.output)
    config = PipelineConfig(
        gdem=Path(args.gdem) if args.gdem else None,
        intrinsics=_require(args.intrinsics, "intrinsics"),
        poses=_require(args.pose, "pose file"),
        disparity_dir=Path(args.disparity).parent,
        output_dir=out.parent,
        rough_params_path=_require(args.rough_params, "rough parameters"),
        density=args.density,
        seed=args.seed,
        method=args.method,
        range=str(args.range),
        profile=args.profile,
        csf_input_size=args.csf_input_size,
    )
    k = load_intrinsics(config.intrinsics)
    pose = _pick_pose(config.poses, args.frame_id)
    gdem = None
    if args.gdem:
        _require(args.gdem, "GDEM")
        gdem = load_pipeline_gdem(config)
        pose = frame_agl(pose, gdem)
    elif pose.agl is None and args.method == "camheight":
        raise ConfigError("pose has no AGL; pass --gdem to derive it")
    disp = read_pfm(_require(args.disparity, "disparity")).astype(np.float64)
    ref = read_pfm(_require(args.ref, "reference depth")).astype(np.float64) if args.ref else None

    timer = Timer()
    t0 = time.perf_counter()
    depth, result = scale_frame(disp, pose, k, gdem, config, ref, timer)
    with timer.stage("write"):
        out.parent.mkdir(parents=True, exist_ok=True)
        write_pfm(out, depth)
    result.timing_ms = {name: round(v, 3) for name, v in timer.ms.items()}
    result.total_ms = round(1e3 * (time.perf_counter() - t0), 3)
    sidecar = result.sidecar(args.method)
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(json.dumps(sidecar, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    pred_dir = _require(args.pred_dir, "prediction directory")
    ref_dir = _require(args.ref_dir, "reference directory")
    frames, failed = {}, {}
    for ref_path in sorted(ref_dir.glob("*.pfm")):
        name = ref_path.stem
        pred_path = pred_dir / ref_path.name
        if not pred_path.exists():
            failed[name] = "missing prediction"
            continue
        pred = read_pfm(pred_path).astype(np.float64)
        ref = read_pfm(ref_path).astype(np.float64)
        try:
            frames[name] = compute_metrics(pred, ref, args.range)
        except GdemScaleError as exc:
            failed[name] = f"{type(exc).__name__}: {exc}"
            continue
        if args.plots:
            emit_plots(args.plots, name, pred, ref)
    if not frames and not failed:
        raise ConfigError(f"no reference PFM files in {ref_dir}")
    doc = emit_report(args.report, frames, args.range, failed, markdown=args.markdown)
    pooled = doc.get("pooled")
    if pooled:
        print(f"frames={len(frames)} failed={len(failed)} abs_rel={pooled['abs_rel']:.4f} "
              f"rmse={pooled['rmse']:.3f} delta1={pooled['delta'][0]:.3f}")
    else:
        print(f"frames=0 failed={len(failed)}")
    return 0


def cmd_pipeline(args) -> int:
    overrides = dict(
        gdem=args.gdem, intrinsics=args.intrinsics, poses=args.poses, disparity_dir=args.disparity_dir,
        rough_params_path=args.rough_params, density=args.density, seed=args.seed, method=args.method,
        range=None if args.range is None else str(args.range), profile=args.profile,
        csf_input_size=args.csf_input_size, ref_dir=args.ref_dir, jobs=args.jobs,
        camheight_variant=args.camheight_variant,
    )
    if args.config:
        config = PipelineConfig.from_toml(_require(args.config, "config"),
                                          output_dir=args.output_dir, scene_dir=args.scene_dir, **overrides)
    elif args.scene_dir:
        if args.output_dir is None:
            raise ConfigError("--output-dir is required")
        config = PipelineConfig.from_scene_dir(args.scene_dir, args.output_dir, **overrides)
    else:
        missing = [n for n in ("gdem", "intrinsics", "poses", "disparity_dir", "output_dir")
                   if getattr(args, n) is None]
        if missing:
            raise ConfigError("missing options: " + ", ".join("--" + m.replace("_", "-") for m in missing))
        if args.rough_params is None:
            raise ConfigError("missing option: --rough-params")
        clean = {k: v for k, v in overrides.items() if v is not None}
        config = PipelineConfig(output_dir=Path(args.output_dir), **clean)
    session = run_pipeline(config)
    ok = len(session.succeeded)
    print(f"frames={len(session.frames)} ok={ok} failed={len(session.failures)}")
    for fid, err in session.failures.items():
        print(f"  {fid}: {err}")
    t = timing_report(session).get("total")
    if t:
        print(f"frame time ms: mean={t['mean']:.1f} median={t['median']:.1f} p95={t['p95']:.1f}")
    return 0


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gdemscale", description=__doc__)
    ap.add_argument("--version", action="version",
                    version=f"gdemscale {__version__} (python {platform.python_version()}, numpy {np.__version__})")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-gdem", help="convert and densify a GDEM point set")
    p.add_argument("--input", required=True, help=".xyz text (x y z or lon lat alt) or .tdgd")
    p.add_argument("--output", required=True)
    p.add_argument("--geodetic", action="store_true", help="input columns are lon lat alt")
    p.add_argument("--zone", help="UTM zone such as 32N (derived when omitted)")
    p.add_argument("--shift", type=_shift, help="global shift E,N,ALT subtracted after projection")
    p.add_argument("--density", type=float, default=DEFAULT_DENSITY, help="points per m2, 0 keeps raw points")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare_gdem)

    p = sub.add_parser("synth", help="write a synthetic scene directory")
    p.add_argument("--output", required=True)
    p.add_argument("--terrain", choices=("plane", "slope", "hills", "boxes"), default="plane")
    p.add_argument("--grade", type=float, default=10.0, help="slope grade in percent")
    p.add_argument("--slope-heading", type=float, default=0.0)
    p.add_argument("--amplitude", type=float, default=10.0)
    p.add_argument("--wavelength", type=float, default=300.0)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--agl", type=float, default=50.0)
    p.add_argument("--pitch", type=float, default=45.0)
    p.add_argument("--s0", type=float, default=3.0)
    p.add_argument("--t0", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.0, help="relative disparity noise")
    p.add_argument("--gdem-spacing", type=float, default=30.0)
    p.add_argument("--gdem-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment-ground", help="ground mask for one frame")
    p.add_argument("--disparity", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--frame-id")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--rough-params", required=True)
    p.add_argument("--gdem", help="used only to derive a missing AGL")
    p.add_argument("--profile", choices=sorted(PROFILES), default="default")
    p.add_argument("--csf-input-size", type=_size, metavar="HxW")
    p.add_argument("--output", required=True, help="PNG mask (0/255)")
    p.add_argument("--bits", help="also write the packed bitset")
    p.set_defaults(func=cmd_segment_ground)

    p = sub.add_parser("scale", help="recover metric depth for one frame")
    p.add_argument("--method", choices=METHODS, default="tandepth")
    p.add_argument("--disparity", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--frame-id")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--gdem")
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rough-params", required=True)
    p.add_argument("--ref", help="reference depth PFM (median and reference methods)")
    p.add_argument("--range", type=_range, default=DEFAULT_RANGE)
    p.add_argument("--profile", choices=sorted(PROFILES), default="default")
    p.add_argument("--csf-input-size", type=_size, metavar="HxW")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("eval", help="metrics of predicted against reference depth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--range", type=_range, default=DEFAULT_RANGE)
    p.add_argument("--report", required=True)
    p.add_argument("--plots", help="directory for error maps")
    p.add_argument("--markdown", action="store_true", help="also write a markdown table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="batch-process a sequence")
    p.add_argument("--config", help="TOML configuration; flags override it")
    p.add_argument("--scene-dir", help="directory laid out like the synth output")
    p.add_argument("--gdem")
    p.add_argument("--intrinsics")
    p.add_argument("--poses")
    p.add_argument("--disparity-dir")
    p.add_argument("--rough-params")
    p.add_argument("--ref-dir")
    p.add_argument("--output-dir")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--range", type=_range)
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--csf-input-size", type=_size, metavar="HxW")
    p.add_argument("--camheight-variant", choices=("disparity", "factor"))
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GdemScaleError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
