"""Pinhole camera model.

Conventions: the camera frame has +X right, +Y down and +Z forward. The world
frame is a local ENU frame (x east, y north, z up). Rotations map world to
camera, ``p_cam = R @ (p_world - C)`` with ``C`` the camera centre. Integer
pixel coordinates go straight through ``K``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def resized(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics of the same camera sampled on a ``height`` x ``width`` grid.

        Pixel ``u'`` of the new grid covers the block centred on
        ``(u' + 0.5) / sx - 0.5`` of the original one.
        """
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=width,
            height=height,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


@dataclass(frozen=True)
class Pose:
    """Camera pose for one frame.

    ``pitch`` is kept explicitly (0 deg looks at the horizon, 90 deg is
    nadir) because datasets ship it as metadata. ``agl`` is the height above
    ground in metres; it may be None until derived from the GDEM.
    """

    rotation: np.ndarray
    position: np.ndarray
    pitch: float
    agl: float | None = None
    frame_id: str = ""

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        c = np.asarray(self.position, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", c)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        if not 0.0 < self.pitch <= 90.0:
            raise ValueError(f"pitch {self.pitch} outside (0, 90]")
        if self.agl is not None and not self.agl > 0:
            raise ValueError(f"agl must be positive, got {self.agl}")

    @property
    def translation(self) -> np.ndarray:
        """``T_c`` such that ``p_cam = R @ p + T_c``."""
        return -self.rotation @ self.position

    def with_agl(self, agl: float) -> "Pose":
        return Pose(self.rotation, self.position, self.pitch, agl, self.frame_id)

    def to_record(self) -> dict:
        w_last = Rotation.from_matrix(self.rotation).as_quat()
        rec = {
            "frame_id": self.frame_id,
            "position_xyz_m": [float(v) for v in self.position],
            "rotation": [float(w_last[3]), float(w_last[0]), float(w_last[1]), float(w_last[2])],
            "pitch_deg": float(self.pitch),
        }
        if self.agl is not None:
            rec["agl_m"] = float(self.agl)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Pose":
        w, x, y, z = (float(v) for v in rec["rotation"])
        rot = Rotation.from_quat([x, y, z, w]).as_matrix()
        agl = rec.get("agl_m")
        return cls(
            rotation=rot,
            position=np.asarray(rec["position_xyz_m"], dtype=np.float64),
            pitch=float(rec["pitch_deg"]),
            agl=None if agl is None else float(agl),
            frame_id=str(rec.get("frame_id", "")),
        )


def look_rotation(pitch: float, heading: float = 0.0) -> np.ndarray:
    """World->camera rotation for a roll-free camera.

    ``heading`` is measured clockwise from north (+y), ``pitch`` downwards
    from the horizon, both in degrees.
    """
    p = math.radians(pitch)
    h = math.radians(heading)
    fwd = np.array([math.cos(p) * math.sin(h), math.cos(p) * math.cos(h), -math.sin(p)])
    right = np.array([math.cos(h), -math.sin(h), 0.0])
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def make_pose(position, pitch: float, heading: float = 0.0, agl: float | None = None, frame_id: str = "") -> Pose:
    return Pose(look_rotation(pitch, heading), np.asarray(position, dtype=np.float64), pitch, agl, frame_id)


class Rejected(enum.Enum):
    BEHIND = "behind"
    OUT_OF_FRAME = "out_of_frame"


def to_camera(points: np.ndarray, pose: Pose) -> np.ndarray:
    """World points (N, 3) into the camera frame."""
    return (np.asarray(points, dtype=np.float64) - pose.position) @ pose.rotation.T


def project(point, pose: Pose, k: Intrinsics):
    """Project one world point. Returns ``(u, v, z)`` or a :class:`Rejected` tag."""
    if hasattr(point, "x"):
        point = (point.x, point.y, point.z)
    p = np.asarray(point, dtype=np.float64)
    pc = pose.rotation @ (p - pose.position)
    if pc[2] <= 0:
        return Rejected.BEHIND
    u = k.fx * pc[0] / pc[2] + k.cx
    v = k.fy * pc[1] / pc[2] + k.cy
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        return Rejected.OUT_OF_FRAME
    return float(u), float(v), float(pc[2])


def project_points(points: np.ndarray, pose: Pose, k: Intrinsics):
    """Vectorised projection. Returns ``u, v, z`` and a keep mask
    (in front of the camera and inside ``[0, W) x [0, H)``)."""
    pc = to_camera(points, pose)
    z = pc[:, 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pc[:, 0] / z + k.cx
        v = k.fy * pc[:, 1] / z + k.cy
    keep = front & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return u, v, z, keep


def pixel_rays(k: Intrinsics) -> np.ndarray:
    """``K^-1 (u, v, 1)`` for every pixel, shape (H, W, 3)."""
    v, u = np.mgrid[0 : k.height, 0 : k.width].astype(np.float64)
    return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)


def back_project(depth: np.ndarray, k: Intrinsics, return_index: bool = False):
    """Camera-frame points for all valid pixels, row-major.

    With ``return_index`` the flat pixel indices of the points are returned
    as well.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != k.shape:
        raise ValueError(f"depth shape {depth.shape} does not match intrinsics {k.shape}")
    valid = np.isfinite(depth) & (depth > 0)
    idx = np.flatnonzero(valid)
    v, u = np.divmod(idx, k.width)
    d = depth.ravel()[idx]
    pts = np.column_stack([d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d])
    if return_index:
        return pts, idx
    return pts


def row_ray_angle(row, k: Intrinsics, pitch: float, center_offset: float = 0.5):
    """Elevation below the horizon (degrees) of the ray through ``row``.

    Returns NaN for rows whose ray never meets level ground (angle <= 0);
    angles past nadir are clamped to 90.
    """
    row = np.asarray(row, dtype=np.float64)
    alpha = pitch + np.degrees(np.arctan((row + center_offset - k.cy) / k.fy))
    alpha = np.where(alpha > 0, np.minimum(alpha, 90.0), np.nan)
    return float(alpha) if alpha.ndim == 0 else alpha


def surface_normals(depth: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Per-pixel unit normals (H, W, 3) in the camera frame, facing the camera.

    Tangents are central differences of the back-projected grid. Border
    pixels and pixels next to invalid depth get NaN.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    pts = pixel_rays(k) * np.where(valid, depth, np.nan)[..., None]

    normals = np.full(depth.shape + (3,), np.nan)
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(dv, du)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / norm
    ok = (
        valid[1:-1, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2] & valid[2:, 1:-1] & valid[:-2, 1:-1]
        & (norm[..., 0] > 0)
    )
    normals[1:-1, 1:-1] = np.where(ok[..., None], n, np.nan)
    return normals


def up_in_camera(pose: Pose) -> np.ndarray:
    """World up direction expressed in the camera frame."""
    return pose.rotation @ np.array([0.0, 0.0, 1.0])


def ground_normal_mask(normals: np.ndarray, pose: Pose, max_angle: float = 15.0) -> np.ndarray:
    """Pixels whose normal is within ``max_angle`` degrees of level-ground up."""
    up = up_in_camera(pose)
    cos = np.nan_to_num(normals @ up, nan=-1.0)
    return cos >= math.cos(math.radians(max_angle))
