"""Scale and shift recovery for relative disparity.

All methods work in disparity space: a relative disparity ``d`` becomes a
metric one through ``s * d + t`` and depth is its reciprocal. Invalid
disparity pixels are NaN, invalid depth pixels are 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, Pose, back_project
from .errors import (
    DegenerateDisparity,
    DegenerateSystem,
    HorizonOnly,
    InsufficientAnchors,
    NonPositiveScale,
    NoOverlap,
)
from .groundseg import RoughScaleParams

MIN_ANCHORS = 10
METHODS = ("fixed", "median", "camheight", "tandepth", "reference")


@dataclass(frozen=True)
class ScaleParams:
    s: float
    t: float
    residual: float = float("nan")  # RMS in disparity units
    n: int = 0


def ssi_normalize(disp: np.ndarray) -> np.ndarray:
    """Shift to zero median and scale to unit mean absolute deviation."""
    disp = np.asarray(disp, dtype=np.float64)
    valid = np.isfinite(disp)
    if not valid.any():
        raise DegenerateDisparity("no valid disparity")
    vals = disp[valid]
    med = np.median(vals)
    spread = np.mean(np.abs(vals - med))
    if not spread > 0:
        raise DegenerateDisparity("disparity is constant")
    return (disp - med) / spread


def lsq_align(pred, ref, n_min: int = MIN_ANCHORS) -> ScaleParams:
    """Least-squares ``s, t`` minimising ``sum (s * pred + t - ref)^2``.

    Non-finite pairs are dropped. Uses the centred closed form, which is
    better conditioned than the normal equations when ``pred`` has a large
    offset.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise ValueError(f"pred and ref differ in size: {pred.size} vs {ref.size}")
    ok = np.isfinite(pred) & np.isfinite(ref)
    x, y = pred[ok], ref[ok]
    n = x.size
    if n < max(n_min, 2):
        raise InsufficientAnchors(f"{n} usable anchors, need {max(n_min, 2)}")
    mx, my = x.mean(), y.mean()
    dx = x - mx
    sxx = float(dx @ dx)
    if not sxx > 1e-24 * max(1.0, mx * mx) * n:
        raise DegenerateSystem("all predictions at the anchors are equal")
    s = float(dx @ (y - my)) / sxx
    t = float(my - s * mx)
    if not s > 0:
        raise NonPositiveScale(f"fitted scale {s:.6g} is not positive", s, t)
    r = s * x + t - y
    return ScaleParams(s, t, float(np.sqrt(np.mean(r * r))), int(n))


def apply_scale(disp: np.ndarray, params) -> np.ndarray:
    """Metric depth ``1 / (s * d + t)``; 0 where the result is undefined."""
    s, t = (params.s, params.t) if hasattr(params, "s") else (params.s_bar, params.t_bar)
    disp = np.asarray(disp, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        scaled = s * disp + t
    ok = np.isfinite(scaled) & (scaled > 0)
    out = np.zeros_like(disp)
    out[ok] = 1.0 / scaled[ok]
    return out


def fixed_scale(disp: np.ndarray, params: RoughScaleParams) -> np.ndarray:
    """Apply one precomputed pair to every frame."""
    return apply_scale(disp, params)


def fixed_params_from_series(fits) -> RoughScaleParams:
    """Median of per-frame ``(s, t)`` fits, used as the fixed baseline pair."""
    fits = list(fits)
    if not fits:
        raise ValueError("no fits given")
    s = float(np.median([f.s for f in fits]))
    t = float(np.median([f.t for f in fits]))
    return RoughScaleParams(s, t)


def median_scale(pred_depth: np.ndarray, ref_depth: np.ndarray) -> float:
    """Scale factor ``median(ref) / median(pred)`` over pixels valid in both."""
    pred_depth = np.asarray(pred_depth, dtype=np.float64)
    ref_depth = np.asarray(ref_depth, dtype=np.float64)
    ok = np.isfinite(pred_depth) & np.isfinite(ref_depth) & (pred_depth > 0) & (ref_depth > 0)
    if not ok.any():
        raise NoOverlap("prediction and reference share no valid pixel")
    return float(np.median(ref_depth[ok]) / np.median(pred_depth[ok]))


def height_disparity_map(pose: Pose, k: Intrinsics, agl: float | None = None) -> np.ndarray:
    """Metric disparity each pixel would have if it saw level ground.

    For a roll-free camera ``agl`` metres above a horizontal plane the
    camera-Z disparity of row ``v`` is ``(sin p + y cos p) / agl`` with
    ``y = (v - cy) / fy``. Rows at or above the horizon get NaN.
    """
    agl = pose.agl if agl is None else agl
    if agl is None or not agl > 0:
        raise ValueError("camera height above ground is required")
    p = math.radians(pose.pitch)
    y = (np.arange(k.height, dtype=np.float64) - k.cy) / k.fy
    row = (math.sin(p) + y * math.cos(p)) / agl
    row = np.where(row > 0, row, np.nan)
    return np.broadcast_to(row[:, None], k.shape).copy()


def camera_height_scale(disp: np.ndarray, pose: Pose, k: Intrinsics, ground: np.ndarray | None = None,
                        restrict_to_ground: bool = True, n_min: int = MIN_ANCHORS):
    """Fit ``s, t`` against the level-ground disparity implied by the AGL.

    Returns ``(params, depth)``. With ``restrict_to_ground=False`` every row
    below the horizon is paired, ground or not.
    """
    target = height_disparity_map(pose, k)
    usable = np.isfinite(target)
    if ground is not None and restrict_to_ground:
        usable &= np.asarray(ground, dtype=bool)
    if not np.isfinite(target).any():
        raise HorizonOnly("no image row looks below the horizon")
    if not usable.any():
        raise HorizonOnly("no ground pixel below the horizon")
    disp = np.asarray(disp, dtype=np.float64)
    params = lsq_align(disp[usable], target[usable], n_min)
    return params, apply_scale(disp, params)


def camera_height_factor(depth: np.ndarray, pose: Pose, k: Intrinsics, ground: np.ndarray) -> float:
    """Single scale factor ``agl / median(h)`` where ``h`` is the height of
    the camera above each ground point of the level-aligned cloud."""
    if pose.agl is None:
        raise ValueError("camera height above ground is required")
    masked = np.where(np.asarray(ground, dtype=bool), depth, 0.0)
    pts = back_project(masked, k)
    if len(pts) == 0:
        raise NoOverlap("no ground pixel with valid depth")
    h = -(pts @ pose.rotation)[:, 2]
    h = h[h > 0]
    if h.size == 0:
        raise HorizonOnly("all ground points lie above the camera")
    return float(pose.agl / np.median(h))


def tandepth_scale(disp: np.ndarray, gmap: np.ndarray, n_min: int = MIN_ANCHORS):
    """Fit ``s, t`` so that the disparity matches ``1 / z`` at GDEM anchors.

    Returns ``(params, depth)``.
    """
    disp = np.asarray(disp, dtype=np.float64)
    gmap = np.asarray(gmap, dtype=np.float64)
    if disp.shape != gmap.shape:
        raise ValueError(f"disparity {disp.shape} and anchor map {gmap.shape} differ in shape")
    sel = gmap > 0
    params = lsq_align(disp[sel], 1.0 / gmap[sel], n_min)
    return params, apply_scale(disp, params)


def reference_scale(disp: np.ndarray, ref_depth: np.ndarray, valid: np.ndarray | None = None,
                    n_min: int = MIN_ANCHORS) -> ScaleParams:
    """Oracle fit against the dense reference depth."""
    ref_depth = np.asarray(ref_depth, dtype=np.float64)
    sel = np.isfinite(ref_depth) & (ref_depth > 0)
    if valid is not None:
        sel &= np.asarray(valid, dtype=bool)
    disp = np.asarray(disp, dtype=np.float64)
    return lsq_align(disp[sel], 1.0 / ref_depth[sel], n_min)


# the "fixed" strategy shares the rough-scale semantics
fixed_scale_apply = fixed_scale
