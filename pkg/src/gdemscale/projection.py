"""Occlusion-aware projection of the GDEM into a sparse per-pixel depth map.

The sparse ground map is a plain (H, W) float raster holding the
camera-frame Z of the surviving GDEM point in each pixel, 0 where empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter

from .camera import Intrinsics, Pose, project_points
from .errors import EmptyProjection, NoGroundAnchors

OCCLUSION_WINDOW = (5, 7)  # rows, cols
OCCLUSION_RATIO = 0.04


@dataclass(frozen=True)
class RangeMask:
    range_min: float
    range_max: float

    def __post_init__(self):
        if not 0 < self.range_min < self.range_max:
            raise ValueError(f"invalid range {self.range_min}:{self.range_max}")

    def __call__(self, depth: np.ndarray) -> np.ndarray:
        return (depth >= self.range_min) & (depth <= self.range_max)

    @classmethod
    def parse(cls, text: str) -> "RangeMask":
        lo, hi = (float(v) for v in str(text).split(":"))
        return cls(lo, hi)

    def __str__(self) -> str:
        return f"{self.range_min:g}:{self.range_max:g}"


# per-scene evaluation ranges
SCENE_RANGES = {
    "uavid_germany": RangeMask(30.0, 150.0),
    "oveselu": RangeMask(30.0, 150.0),
    "wilduav": RangeMask(30.0, 150.0),
    "chilia": RangeMask(50.0, 250.0),
}
DEFAULT_RANGE = RangeMask(30.0, 150.0)


def project_gdem(gdem, pose: Pose, k: Intrinsics) -> np.ndarray:
    """Rasterise GDEM points into the image, keeping the nearest per pixel.

    Points are binned to the nearest integer pixel, which is the pixel whose
    ray passes closest to them under the integer-coordinate convention.
    """
    pts = getattr(gdem, "points", gdem)
    u, v, z, keep = project_points(pts, pose, k)
    if not keep.any():
        raise EmptyProjection("no GDEM point projects into the frame")
    col = np.minimum(np.floor(u[keep] + 0.5).astype(np.intp), k.width - 1)
    row = np.minimum(np.floor(v[keep] + 0.5).astype(np.intp), k.height - 1)
    flat = np.full(k.height * k.width, np.inf)
    np.minimum.at(flat, row * k.width + col, z[keep])
    flat[np.isinf(flat)] = 0.0
    return flat.reshape(k.shape)


def reject_occluded(gmap: np.ndarray, window: tuple[int, int] = OCCLUSION_WINDOW,
                    ratio: float = OCCLUSION_RATIO) -> np.ndarray:
    """Drop points that have a clearly nearer neighbour in their window.

    A point at depth g is removed when the window minimum is below
    ``g - ratio * g``. All decisions use the input map, so the result does
    not depend on visiting order.
    """
    occupied = gmap > 0
    filled = np.where(occupied, gmap, np.inf)
    # the point itself never triggers the rule, so it can stay in the window
    wmin = minimum_filter(filled, size=window, mode="constant", cval=np.inf)
    occluded = occupied & (gmap - wmin > ratio * gmap)
    out = gmap.copy()
    out[occluded] = 0.0
    return out


def apply_masks(gmap: np.ndarray, ground: np.ndarray | None, rng: RangeMask | None) -> np.ndarray:
    """Keep anchors that are on ground pixels and inside the depth range."""
    keep = gmap > 0
    if ground is not None:
        ground = np.asarray(ground, dtype=bool)
        if ground.shape != gmap.shape:
            raise ValueError(f"ground mask {ground.shape} does not match map {gmap.shape}")
        keep &= ground
    if rng is not None:
        keep &= rng(gmap)
    if not keep.any():
        raise NoGroundAnchors("no GDEM anchor survives the ground and range masks")
    return np.where(keep, gmap, 0.0)


def anchors(gmap: np.ndarray):
    """``(rows, cols, z)`` of the stored points, row-major."""
    rows, cols = np.nonzero(gmap > 0)
    return rows, cols, gmap[rows, cols]


def to_csv(gmap: np.ndarray, path) -> None:
    rows, cols, z = anchors(gmap)
    with open(path, "w") as f:
        f.write("u,v,z_m\n")
        for r, c, d in zip(rows, cols, z):
            f.write(f"{c},{r},{d:.6f}\n")
