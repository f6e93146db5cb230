"""Synthetic scenes with known geometry for closed-loop verification.

Terrains are analytic height fields. Reference depth is rendered by casting
one ray per pixel; relative disparity is derived from it through a known
affine distortion so that the recovered scale and shift can be checked.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Intrinsics, Pose, make_pose, pixel_rays
from .gdem import GdemCloud, save_gdem
from .io import write_pfm

MAX_RANGE = 3000.0
MARCH_STEP = 1.0


@dataclass(frozen=True)
class Box:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    height: float  # above the base plane


@dataclass(frozen=True)
class AnalyticTerrain:
    """Height field ``z = height(x, y)``.

    ``kind`` is one of ``plane``, ``slope``, ``hills`` or ``boxes``. Slopes
    rise by ``grade`` percent along ``heading`` (degrees clockwise from
    north) and pass through ``base`` at ``origin``.
    """

    kind: str = "plane"
    base: float = 0.0
    grade: float = 0.0
    heading: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)
    amplitude: float = 0.0
    wavelength: float = 200.0
    boxes: tuple[Box, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("plane", "slope", "hills", "boxes"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")

    def _plane_coeffs(self):
        g = self.grade / 100.0 if self.kind == "slope" else 0.0
        a = g * math.sin(math.radians(self.heading))
        b = g * math.cos(math.radians(self.heading))
        c = self.base - a * self.origin[0] - b * self.origin[1]
        return a, b, c

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        a, b, c = self._plane_coeffs()
        z = a * x + b * y + c
        if self.kind == "hills":
            w = 2 * math.pi / self.wavelength
            z = z + self.amplitude * np.sin(w * x) * np.cos(w * y)
        elif self.kind == "boxes":
            for bx in self.boxes:
                inside = (x >= bx.xmin) & (x <= bx.xmax) & (y >= bx.ymin) & (y <= bx.ymax)
                z = np.where(inside, np.maximum(z, self.base + bx.height), z)
        return z


def plane(base: float = 0.0) -> AnalyticTerrain:
    return AnalyticTerrain("plane", base=base)


def slope(grade: float, heading: float = 0.0, base: float = 0.0, origin=(0.0, 0.0)) -> AnalyticTerrain:
    return AnalyticTerrain("slope", base=base, grade=grade, heading=heading, origin=tuple(origin))


def hills(amplitude: float, wavelength: float, base: float = 0.0) -> AnalyticTerrain:
    return AnalyticTerrain("hills", base=base, amplitude=amplitude, wavelength=wavelength)


def plane_with_boxes(boxes, base: float = 0.0) -> AnalyticTerrain:
    return AnalyticTerrain("boxes", base=base, boxes=tuple(boxes))


def default_boxes() -> tuple[Box, ...]:
    """Blocks in front of the first default frame, about 20% of its pixels."""
    return (
        Box(-30, -5, 35, 60, 10),
        Box(8, 35, 60, 85, 12),
        Box(-45, -15, 95, 125, 15),
        Box(20, 50, 110, 140, 8),
        Box(-12, 12, 75, 90, 6),
    )


# rendering -----------------------------------------------------------------


def world_rays(pose: Pose, k: Intrinsics) -> np.ndarray:
    """Per-pixel world directions scaled so the camera-Z component is 1."""
    return pixel_rays(k) @ pose.rotation


def _plane_hit(c, w, a, b, cc):
    denom = w[..., 2] - a * w[..., 0] - b * w[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (a * c[0] + b * c[1] + cc - c[2]) / denom
    return np.where(np.isfinite(t) & (t > 0), t, np.inf)


def _box_hit(c, w, box: Box, base: float):
    lo = np.array([box.xmin, box.ymin, base])
    hi = np.array([box.xmax, box.ymax, base + box.height])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - c) / w
        t2 = (hi - c) / w
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def _march(terrain: AnalyticTerrain, c, w, max_range, tol):
    flat_w = w.reshape(-1, 3)
    dt = MARCH_STEP / np.linalg.norm(flat_w, axis=1)
    t_max = max_range / np.linalg.norm(flat_w, axis=1)

    def above(t, idx):
        p = c + t[:, None] * flat_w[idx]
        return p[:, 2] - terrain.height(p[:, 0], p[:, 1])

    n = len(flat_w)
    out = np.full(n, np.inf)
    active = np.arange(n)
    t = np.zeros(n)
    while active.size:
        t_next = t[active] + dt[active]
        f = above(t_next, active)
        crossed = f <= 0
        if crossed.any():
            idx = active[crossed]
            lo = t[idx]
            hi = t_next[crossed]
            # bisection until the bracket is below tol along the ray
            while True:
                mid = 0.5 * (lo + hi)
                below = above(mid, idx) <= 0
                hi = np.where(below, mid, hi)
                lo = np.where(below, lo, mid)
                if np.all((hi - lo) / dt[idx] * MARCH_STEP < tol):
                    break
            out[idx] = hi
        t[active] = t_next
        alive = ~crossed & (t_next < t_max[active])
        active = active[alive]
    return out.reshape(w.shape[:-1])


def render_reference_depth(terrain: AnalyticTerrain, pose: Pose, k: Intrinsics,
                           max_range: float = MAX_RANGE, tol: float = 1e-6) -> np.ndarray:
    """Camera-Z depth of the first terrain hit per pixel (0 where none)."""
    c = pose.position
    w = world_rays(pose, k)
    if terrain.kind in ("plane", "slope", "boxes"):
        a, b, cc = terrain._plane_coeffs()
        t = _plane_hit(c, w, a, b, cc)
        if terrain.kind == "boxes":
            for box in terrain.boxes:
                t = np.minimum(t, _box_hit(c, w, box, terrain.base))
    else:
        t = _march(terrain, c, w, max_range, tol)
    rng = t * np.linalg.norm(w, axis=-1)
    return np.where(np.isfinite(t) & (rng <= max_range), t, 0.0)


def sample_synthetic_gdem(terrain: AnalyticTerrain, extent, spacing: float,
                          noise_sigma: float = 0.0, seed: int = 0) -> GdemCloud:
    """Regular grid of terrain heights over ``extent = (xmin, xmax, ymin, ymax)``."""
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    xmin, xmax, ymin, ymax = extent
    xs = xmin + spacing * np.arange(int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1)
    ys = ymin + spacing * np.arange(int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1)
    gx, gy = np.meshgrid(xs, ys)
    gz = terrain.height(gx, gy)
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        gz = gz + rng.normal(0.0, noise_sigma, gz.shape)
    return GdemCloud(np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]))


def make_relative_disparity(ref_depth: np.ndarray, s0: float, t0: float,
                            noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Relative disparity ``(1/D - t0) / s0`` with optional log-normal noise.

    The noise multiplies the metric disparity before the distortion.
    Pixels without reference depth become NaN.
    """
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    ref_depth = np.asarray(ref_depth, dtype=np.float64)
    valid = ref_depth > 0
    disp = np.zeros_like(ref_depth)
    disp[valid] = 1.0 / ref_depth[valid]
    if noise > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        disp = disp * np.exp(noise * rng.standard_normal(disp.shape))
    rel = (disp - t0) / s0
    return np.where(valid, rel, np.nan)


# scenes --------------------------------------------------------------------


@dataclass
class SyntheticScene:
    terrain: AnalyticTerrain
    intrinsics: Intrinsics
    poses: list[Pose]
    gdem: GdemCloud
    depths: list[np.ndarray]
    disparities: list[np.ndarray]
    rough_params: tuple[float, float]
    distortion: tuple[float, float]


def default_intrinsics(width: int = 1024, height: int = 512) -> Intrinsics:
    # vertical FoV of about 53 degrees
    f = float(height)
    return Intrinsics(f, f, width / 2.0, height / 2.0, width, height)


def build_scene(terrain: AnalyticTerrain | None = None, n_frames: int = 3, width: int = 1024,
                height: int = 512, agl: float = 50.0, pitch: float = 45.0, s0: float = 3.0,
                t0: float = 0.2, noise: float = 0.0, gdem_spacing: float = 30.0,
                gdem_noise: float = 0.0, rough_error: tuple[float, float] = (1.2, 0.002),
                seed: int = 0) -> SyntheticScene:
    """A short flight over ``terrain`` with reference depth and relative disparity.

    Frames are spaced 40 m apart heading north-east, each ``agl`` metres
    above the terrain directly below. ``rough_error`` perturbs the ideal
    rough parameters ``(s0, t0)`` as ``(s0 * f, t0 * f + dt)``.
    """
    terrain = terrain or plane()
    k = default_intrinsics(width, height)
    poses = []
    for i in range(n_frames):
        x, y = 40.0 * i, 25.0 * i
        heading = 10.0 * i
        ground = float(terrain.height(x, y))
        poses.append(make_pose((x, y, ground + agl), pitch, heading, agl, frame_id=f"{i:04d}"))

    margin = 500.0
    xs = [p.position[0] for p in poses]
    ys = [p.position[1] for p in poses]
    extent = (min(xs) - margin, max(xs) + margin, min(ys) - margin, max(ys) + margin)
    gdem = sample_synthetic_gdem(terrain, extent, gdem_spacing, gdem_noise, seed)

    depths = [render_reference_depth(terrain, p, k) for p in poses]
    disps = [
        make_relative_disparity(d, s0, t0, noise, seed=seed + 1000 + i)
        for i, d in enumerate(depths)
    ]
    f, dt = rough_error
    return SyntheticScene(terrain, k, poses, gdem, depths, disps, (s0 * f, t0 * f + dt), (s0, t0))


def write_scene(scene: SyntheticScene, out_dir) -> Path:
    """Write a scene directory the pipeline can consume."""
    out = Path(out_dir)
    (out / "disparity").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    (out / "intrinsics.json").write_text(json.dumps(scene.intrinsics.to_dict(), indent=2))
    with open(out / "poses.jsonl", "w") as f:
        for p in scene.poses:
            f.write(json.dumps(p.to_record()) + "\n")
    s_bar, t_bar = scene.rough_params
    (out / "rough_params.json").write_text(json.dumps({"s_bar": s_bar, "t_bar": t_bar}, indent=2))
    save_gdem(scene.gdem, out / "gdem.tdgd")
    for p, d, disp in zip(scene.poses, scene.depths, scene.disparities):
        write_pfm(out / "depth" / f"{p.frame_id}.pfm", d)
        write_pfm(out / "disparity" / f"{p.frame_id}.pfm", disp)
    meta = {
        "terrain": scene.terrain.kind,
        "distortion": {"s0": scene.distortion[0], "t0": scene.distortion[1]},
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=2))
    return out
