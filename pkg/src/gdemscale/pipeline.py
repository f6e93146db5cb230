"""Batch orchestration: configuration, per-frame processing and timing."""

from __future__ import annotations

import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .camera import Intrinsics, Pose, ground_normal_mask, surface_normals
from .errors import ConfigError, GdemScaleError
from .gdem import GdemCloud, densify_cloud, load_gdem, read_xyz, terrain_height
from .groundseg import PROFILES, RoughScaleParams, rough_scale, segment_ground
from .io import load_intrinsics, load_poses, load_rough_params, read_pfm, write_pfm
from .projection import OCCLUSION_WINDOW, RangeMask, apply_masks, project_gdem, reject_occluded
from .scaling import (
    METHODS,
    MIN_ANCHORS,
    ScaleParams,
    apply_scale,
    camera_height_factor,
    camera_height_scale,
    median_scale,
    reference_scale,
    tandepth_scale,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger(__name__)

STAGES = ("load", "csf", "projection", "occlusion", "masks", "least_squares", "apply", "write")
NORMAL_MAX_ANGLE = 15.0

_PATH_FIELDS = ("gdem", "intrinsics", "poses", "disparity_dir", "rough_params_path", "ref_dir", "output_dir")


@dataclass(frozen=True)
class PipelineConfig:
    gdem: Path
    intrinsics: Path
    poses: Path
    disparity_dir: Path
    output_dir: Path
    rough_params: tuple[float, float] | None = None
    rough_params_path: Path | None = None
    density: float | None = None
    seed: int = 0
    method: str = "tandepth"
    range: str = "30:150"
    profile: str = "default"
    csf_input_size: tuple[int, int] | None = None
    ref_dir: Path | None = None
    occlusion_window: tuple[int, int] = OCCLUSION_WINDOW
    min_anchors: int = MIN_ANCHORS
    camheight_variant: str = "disparity"  # or "factor"
    restrict_to_ground: bool = True
    jobs: int = 1

    def rough(self) -> RoughScaleParams:
        if self.rough_params is not None:
            return RoughScaleParams(*self.rough_params)
        return RoughScaleParams(*load_rough_params(self.rough_params_path))

    def range_mask(self) -> RangeMask:
        return RangeMask.parse(self.range)

    def validate(self) -> "PipelineConfig":
        for name in ("gdem", "intrinsics", "poses"):
            p = getattr(self, name)
            if not Path(p).is_file():
                raise ConfigError(f"{name} file not found: {p}")
        if not Path(self.disparity_dir).is_dir():
            raise ConfigError(f"disparity directory not found: {self.disparity_dir}")
        if self.rough_params is None:
            if self.rough_params_path is None or not Path(self.rough_params_path).is_file():
                raise ConfigError(f"rough parameters not found: {self.rough_params_path}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.method in ("median", "reference") and (self.ref_dir is None or not Path(self.ref_dir).is_dir()):
            raise ConfigError(f"method {self.method} needs a reference depth directory")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown CSF profile {self.profile!r}")
        if self.camheight_variant not in ("disparity", "factor"):
            raise ConfigError(f"unknown camera-height variant {self.camheight_variant!r}")
        if self.density is not None and not self.density > 0:
            raise ConfigError("density must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            self.range_mask()
            self.rough()
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @classmethod
    def from_scene_dir(cls, scene_dir, output_dir, **overrides) -> "PipelineConfig":
        """Config for the directory layout written by ``synth``."""
        d = Path(scene_dir)
        base = dict(
            gdem=d / "gdem.tdgd",
            intrinsics=d / "intrinsics.json",
            poses=d / "poses.jsonl",
            disparity_dir=d / "disparity",
            rough_params_path=d / "rough_params.json",
            ref_dir=d / "depth" if (d / "depth").is_dir() else None,
            output_dir=Path(output_dir),
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**_coerce(base))

    @classmethod
    def from_toml(cls, path, **overrides) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        raw = dict(raw.get("pipeline", raw))
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known - {"scene_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key in _PATH_FIELDS + ("scene_dir",):
            if key in raw and raw[key] is not None:
                p = Path(raw[key])
                raw[key] = p if p.is_absolute() else path.parent / p
        raw.update({k: v for k, v in overrides.items() if v is not None})
        scene = raw.pop("scene_dir", None)
        if scene is not None:
            out = raw.pop("output_dir", None)
            if out is None:
                raise ConfigError("output_dir is required")
            return cls.from_scene_dir(scene, out, **raw)
        try:
            return cls(**_coerce(raw))
        except TypeError as exc:
            raise ConfigError(f"incomplete config: {exc}") from exc


def _coerce(d: dict) -> dict:
    out = dict(d)
    for key in _PATH_FIELDS:
        if out.get(key) is not None:
            out[key] = Path(out[key])
    for key in ("rough_params", "csf_input_size", "occlusion_window"):
        if out.get(key) is not None:
            out[key] = tuple(out[key])
    return out


@dataclass
class FrameResult:
    frame_id: str
    ok: bool
    params: ScaleParams | None = None
    n_anchors: int = 0
    timing_ms: dict = field(default_factory=dict)
    total_ms: float = 0.0
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def sidecar(self, method: str) -> dict:
        d = {
            "frame_id": self.frame_id,
            "method": method,
            "ok": self.ok,
            "n_anchors": self.n_anchors,
            "timing_ms": self.timing_ms,
            "total_ms": self.total_ms,
        }
        if self.params is not None:
            d.update(s=self.params.s, t=self.params.t, residual=self.params.residual, n_pairs=self.params.n)
        if self.error:
            d["error"] = self.error
        d.update(self.extra)
        return d


@dataclass
class Session:
    frames: list[FrameResult]

    @property
    def failures(self) -> dict[str, str]:
        return {f.frame_id: f.error for f in self.frames if not f.ok}

    @property
    def succeeded(self) -> list[FrameResult]:
        return [f for f in self.frames if f.ok]


def load_pipeline_gdem(config: PipelineConfig) -> GdemCloud:
    path = Path(config.gdem)
    cloud = read_xyz(path)[0] if path.suffix.lower() in (".xyz", ".txt") else load_gdem(path)
    if config.density is not None and cloud.density_pts_per_m2 is None:
        cloud = densify_cloud(cloud, config.density, config.seed)
    return cloud


class Timer:
    """Accumulates wall-clock milliseconds per named stage."""

    def __init__(self):
        self.ms: dict[str, float] = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.ms[name] = timer.ms.get(name, 0.0) + 1e3 * (time.perf_counter() - self.t0)

        return _Ctx()


def frame_agl(pose: Pose, gdem: GdemCloud) -> Pose:
    if pose.agl is not None:
        return pose
    agl = float(pose.position[2]) - terrain_height(gdem, pose.position[:2])
    if not agl > 0:
        raise GdemScaleError(f"camera is not above the GDEM surface (agl {agl:.2f} m)")
    return pose.with_agl(agl)


def scale_frame(disp: np.ndarray, pose: Pose, k: Intrinsics, gdem: GdemCloud | None,
                config: PipelineConfig, ref: np.ndarray | None = None, timer: "Timer | None" = None):
    """Recover metric depth for one frame with ``config.method``.

    Returns ``(depth, result)``. Library errors propagate.
    """
    timer = timer or Timer()
    result = FrameResult(pose.frame_id, ok=False)
    rough = config.rough()
    rng = config.range_mask()
    method = config.method
    params = None
    if method in ("median", "reference") and ref is None:
        raise ConfigError(f"method {method} needs reference depth")

    ground = None
    if method in ("tandepth", "camheight"):
        info: dict = {}
        with timer.stage("csf"):
            ground = segment_ground(disp, pose, k, rough, config.profile, config.csf_input_size, info=info)
        result.extra.update(cf=info.get("cf"), ground_fraction=float(ground.mean()))

    if method == "tandepth":
        if gdem is None:
            raise ConfigError("tandepth needs a GDEM")
        with timer.stage("projection"):
            gmap = project_gdem(gdem, pose, k)
        with timer.stage("occlusion"):
            gmap = reject_occluded(gmap, config.occlusion_window)
        with timer.stage("masks"):
            gmap = apply_masks(gmap, ground, rng)
        result.n_anchors = int(np.count_nonzero(gmap))
        with timer.stage("least_squares"):
            params, _ = tandepth_scale(disp, gmap, config.min_anchors)
        with timer.stage("apply"):
            depth = apply_scale(disp, params)
    elif method == "camheight":
        with timer.stage("masks"):
            rough_depth = rough_scale(disp, rough)
            normals = ground_normal_mask(surface_normals(rough_depth, k), pose, NORMAL_MAX_ANGLE)
            sel = ground & normals
        result.n_anchors = int(np.count_nonzero(sel))
        if config.camheight_variant == "factor":
            with timer.stage("least_squares"):
                sf = camera_height_factor(rough_depth, pose, k, sel)
            with timer.stage("apply"):
                depth = rough_depth * sf
            result.extra["scale_factor"] = sf
        else:
            with timer.stage("least_squares"):
                params, _ = camera_height_scale(disp, pose, k, sel, config.restrict_to_ground,
                                                config.min_anchors)
            with timer.stage("apply"):
                depth = apply_scale(disp, params)
    elif method == "fixed":
        with timer.stage("apply"):
            depth = rough_scale(disp, rough)
        params = ScaleParams(rough.s_bar, rough.t_bar)
    elif method == "median":
        with timer.stage("least_squares"):
            rough_depth = rough_scale(disp, rough)
            valid = rng(np.where(ref > 0, ref, 0.0))
            sf = median_scale(rough_depth, np.where(valid, ref, 0.0))
        with timer.stage("apply"):
            depth = rough_depth * sf
        result.extra["scale_factor"] = sf
    else:
        with timer.stage("least_squares"):
            valid = rng(np.where(ref > 0, ref, 0.0))
            params = reference_scale(disp, ref, valid, config.min_anchors)
        with timer.stage("apply"):
            depth = apply_scale(disp, params)
    result.ok = True
    result.params = params
    return depth, result


def process_frame(pose: Pose, k: Intrinsics, gdem: GdemCloud | None, config: PipelineConfig) -> FrameResult:
    """Load one frame, scale it and write the depth PFM and JSON sidecar."""
    fid = pose.frame_id
    timer = Timer()
    t0 = time.perf_counter()
    result = FrameResult(fid, ok=False)
    out_dir = Path(config.output_dir) / "depth"
    try:
        with timer.stage("load"):
            disp = read_pfm(Path(config.disparity_dir) / f"{fid}.pfm").astype(np.float64)
            if gdem is not None:
                pose = frame_agl(pose, gdem)
            ref = None
            if config.method in ("median", "reference"):
                ref = read_pfm(Path(config.ref_dir) / f"{fid}.pfm").astype(np.float64)
        depth, result = scale_frame(disp, pose, k, gdem, config, ref, timer)
        with timer.stage("write"):
            out_dir.mkdir(parents=True, exist_ok=True)
            write_pfm(out_dir / f"{fid}.pfm", depth)
    except (GdemScaleError, OSError) as exc:
        result = FrameResult(fid, ok=False, n_anchors=result.n_anchors, extra=result.extra)
        result.error = f"{type(exc).__name__}: {exc}"
        logger.warning("frame=%s failed error=%s", fid, result.error)
    result.timing_ms = {k: round(v, 3) for k, v in timer.ms.items()}
    result.total_ms = round(1e3 * (time.perf_counter() - t0), 3)
    for stage, ms in result.timing_ms.items():
        logger.info("frame=%s stage=%s ms=%.2f anchors=%d", fid, stage, ms, result.n_anchors)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{fid}.json").write_text(json.dumps(result.sidecar(config.method), indent=2, sort_keys=True) + "\n")
    return result


_WORKER: dict = {}


def _init_worker(config: PipelineConfig):
    _WORKER["config"] = config
    _WORKER["k"] = load_intrinsics(config.intrinsics)
    _WORKER["gdem"] = load_pipeline_gdem(config)


def _run_one(pose: Pose) -> FrameResult:
    return process_frame(pose, _WORKER["k"], _WORKER["gdem"], _WORKER["config"])


def run_pipeline(config: PipelineConfig) -> Session:
    """Process every pose record; per-frame failures are collected, not raised."""
    config.validate()
    try:
        poses = load_poses(config.poses)
        k = load_intrinsics(config.intrinsics)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load inputs: {exc}") from exc
    if not poses:
        raise ConfigError(f"no pose records in {config.poses}")
    gdem = load_pipeline_gdem(config)
    logger.info("gdem points=%d source=%s frames=%d method=%s", len(gdem), gdem.source_tag, len(poses), config.method)

    if config.jobs == 1 or len(poses) == 1:
        frames = [process_frame(p, k, gdem, config) for p in poses]
    else:
        with ProcessPoolExecutor(max_workers=config.jobs, initializer=_init_worker, initargs=(config,)) as ex:
            frames = list(ex.map(_run_one, poses))

    session = Session(frames)
    summary = {
        "config": _config_summary(config),
        "n_frames": len(frames),
        "n_failed": len(session.failures),
        "failures": session.failures,
        "timing": timing_report(session) if session.frames else {},
    }
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "session.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return session


def _config_summary(config: PipelineConfig) -> dict:
    d = asdict(config)
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}


def timing_report(session: Session) -> dict:
    """Mean, median and 95th percentile per stage, in milliseconds."""
    frames = session.frames
    if not frames:
        raise ValueError("no frames processed")
    report = {}
    for stage in STAGES + ("total",):
        vals = [f.total_ms if stage == "total" else f.timing_ms.get(stage) for f in frames]
        vals = np.array([v for v in vals if v is not None], dtype=np.float64)
        if vals.size == 0:
            continue
        report[stage] = {
            "mean": float(vals.mean()),
            "median": float(np.median(vals)),
            "p95": float(np.percentile(vals, 95)),
            "n": int(vals.size),
        }
    return report


def with_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    return replace(config, **_coerce({k: v for k, v in overrides.items() if v is not None}))
