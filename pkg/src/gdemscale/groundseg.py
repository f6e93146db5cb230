"""Ground segmentation of relative disparity maps with a scale-adapted CSF.

The relative disparity is first turned into a rough metric depth with a
fixed scale/shift pair. The expected distance to the ground along the
optical axis (from AGL and pitch) then gives a correction factor ``cf``
which rescales every length parameter of the cloth simulation, so the
filter behaves the same whatever the true scale of the rough cloud.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, Pose, back_project
from .csf import CsfParams, csf_classify
from .errors import CfUndefined, CsfFailed, InvalidCloud, RoughScaleDiverged

logger = logging.getLogger(__name__)

CENTRAL_ROWS = 35
MAX_INVALID_FRACTION = 0.5

# (cloth resolution, class threshold) before division by cf
PROFILES = {
    "default": (1.5, 0.5),
    "cluttered": (0.5, 1.25),
}


@dataclass(frozen=True)
class RoughScaleParams:
    s_bar: float
    t_bar: float

    def __post_init__(self):
        if not self.s_bar > 0:
            raise ValueError("s_bar must be positive")


def rough_scale(disp: np.ndarray, params: RoughScaleParams) -> np.ndarray:
    """Depth ``1 / (s_bar * d + t_bar)``; 0 where undefined.

    Raises RoughScaleDiverged when more than half of the valid disparities
    map to a non-positive scaled disparity.
    """
    disp = np.asarray(disp, dtype=np.float64)
    valid = np.isfinite(disp)
    scaled = params.s_bar * np.where(valid, disp, 0.0) + params.t_bar
    ok = valid & (scaled > 0)
    n_valid = int(valid.sum())
    if n_valid == 0 or (n_valid - ok.sum()) > MAX_INVALID_FRACTION * n_valid:
        raise RoughScaleDiverged(
            f"{n_valid - int(ok.sum())} of {n_valid} pixels have non-positive rough disparity"
        )
    out = np.zeros_like(disp)
    out[ok] = 1.0 / scaled[ok]
    return out


def expected_central_distance(pitch: float, agl: float) -> float:
    """Optical-axis distance to level ground, ``agl / sin(pitch)``.

    Pitch is measured from the horizon; this is the same quantity as
    ``agl / cos(angle from vertical)``.
    """
    return agl / math.sin(math.radians(pitch))


def central_rows(height: int, band: int = CENTRAL_ROWS) -> slice:
    half = band // 2
    return slice(max(height // 2 - half, 0), min(height // 2 + half + 1, height))


def adjustment_factor(rough: np.ndarray, pitch: float, agl: float, band: int = CENTRAL_ROWS) -> float:
    """Ratio of the expected central ground distance to the rough central median."""
    if not 0 < pitch <= 90:
        raise ValueError(f"pitch {pitch} outside (0, 90]")
    if not agl > 0:
        raise ValueError("agl must be positive")
    rows = np.asarray(rough)[central_rows(rough.shape[0], band)]
    vals = rows[np.isfinite(rows) & (rows > 0)]
    if vals.size == 0:
        raise CfUndefined("no valid rough depth in the central rows")
    return expected_central_distance(pitch, agl) / float(np.median(vals))


def downsample(raster: np.ndarray, height: int, width: int) -> np.ndarray:
    """Block NaN-mean when the size divides evenly, nearest sampling otherwise."""
    h, w = raster.shape
    if h % height == 0 and w % width == 0:
        blocks = raster.reshape(height, h // height, width, w // width)
        with np.errstate(invalid="ignore"), _quiet_nanmean():
            return np.nanmean(blocks, axis=(1, 3))
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.intp), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.intp), w - 1)
    return raster[np.ix_(rows, cols)]


def upsample_nearest(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = mask.shape
    rows = np.minimum((np.arange(height) * h // height), h - 1)
    cols = np.minimum((np.arange(width) * w // width), w - 1)
    return mask[np.ix_(rows, cols)]


class _quiet_nanmean:
    def __enter__(self):
        import warnings

        self._ctx = warnings.catch_warnings()
        self._ctx.__enter__()
        warnings.simplefilter("ignore", RuntimeWarning)

    def __exit__(self, *exc):
        return self._ctx.__exit__(*exc)


def csf_params_for(cf: float, profile: str = "default", base: CsfParams | None = None) -> CsfParams:
    try:
        res, th = PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown CSF profile {profile!r}") from None
    base = base or CsfParams()
    return CsfParams(
        cloth_resolution=res,
        class_threshold=th,
        rigidity=base.rigidity,
        time_step=base.time_step,
        gravity_displacement=base.gravity_displacement,
        max_iterations=base.max_iterations,
        stop_epsilon=base.stop_epsilon,
        initial_offset=base.initial_offset,
    ).scaled(cf)


def segment_rough_depth(rough: np.ndarray, pose: Pose, k: Intrinsics, profile: str = "default",
                        base: CsfParams | None = None, info: dict | None = None) -> np.ndarray:
    """Ground mask from an already rough-scaled depth map."""
    if pose.agl is None:
        raise ValueError("pose has no AGL")
    cf = adjustment_factor(rough, pose.pitch, pose.agl)
    params = csf_params_for(cf, profile, base)
    pts, idx = back_project(rough, k, return_index=True)
    # camera frame -> world-aligned axes (z up), origin at the camera
    cloud = pts @ pose.rotation
    try:
        labels = csf_classify(cloud, params)
    except InvalidCloud:
        raise
    except Exception as exc:  # numerical blow-ups inside the simulation
        raise CsfFailed(str(exc)) from exc
    mask = np.zeros(rough.size, dtype=bool)
    mask[idx] = labels
    if info is not None:
        info.update(cf=cf, cloth_resolution=params.cloth_resolution,
                    class_threshold=params.class_threshold, n_points=int(len(pts)),
                    ground_fraction=float(labels.mean()) if len(labels) else 0.0)
    return mask.reshape(rough.shape)


def segment_ground(disp: np.ndarray, pose: Pose, k: Intrinsics, rough: RoughScaleParams,
                   profile: str = "default", input_size: tuple[int, int] | None = None,
                   base: CsfParams | None = None, info: dict | None = None) -> np.ndarray:
    """Boolean ground mask (H, W) for a relative disparity map.

    ``input_size = (height, width)`` runs the filter on a reduced raster and
    upsamples the mask back with nearest-neighbour lookup.
    """
    disp = np.asarray(disp, dtype=np.float64)
    if disp.shape != k.shape:
        raise ValueError(f"disparity shape {disp.shape} does not match intrinsics {k.shape}")
    work_disp, work_k = disp, k
    if input_size is not None and tuple(input_size) != disp.shape:
        h, w = input_size
        work_disp = downsample(disp, h, w)
        work_k = k.resized(w, h)
    depth = rough_scale(work_disp, rough)
    mask = segment_rough_depth(depth, pose, work_k, profile, base, info)
    if mask.shape != disp.shape:
        mask = upsample_nearest(mask, *disp.shape)
    return mask
