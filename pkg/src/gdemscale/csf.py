"""Cloth Simulation Filter for ground classification of point clouds.

A particle grid is dropped onto the upside-down cloud. Each particle falls
under gravity (Verlet integration with light damping), is pulled towards its
neighbours by vertical springs and freezes once it reaches the height of the
cloud point it sits on. Points close to the settled cloth are ground.

Input clouds are z-up. All length parameters are in the cloud's units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import CsfFailed, InvalidCloud

DAMPING = 0.01
GRID_PADDING = 2  # cells around the bounding box

# spring neighbours: immediate (incl. diagonals) and second ring
_NEIGHBOUR_OFFSETS = np.array(
    [
        (1, 0), (-1, 0), (0, 1), (0, -1),
        (1, 1), (-1, -1), (1, -1), (-1, 1),
        (2, 0), (-2, 0), (0, 2), (0, -2),
        (2, 2), (-2, -2), (2, -2), (-2, 2),
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class CsfParams:
    cloth_resolution: float = 1.5
    class_threshold: float = 0.5
    rigidity: int = 1
    time_step: float = 0.65
    gravity_displacement: float = 0.2 * 0.65**2
    max_iterations: int = 500
    stop_epsilon: float = 0.005
    initial_offset: float = 0.05

    def __post_init__(self):
        if not self.cloth_resolution > 0:
            raise ValueError("cloth_resolution must be positive")
        if not self.class_threshold > 0:
            raise ValueError("class_threshold must be positive")
        if self.rigidity not in (1, 2, 3):
            raise ValueError("rigidity must be 1, 2 or 3")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def scaled(self, factor: float) -> "CsfParams":
        """Divide every length-valued parameter by ``factor``."""
        return replace(
            self,
            cloth_resolution=self.cloth_resolution / factor,
            class_threshold=self.class_threshold / factor,
            gravity_displacement=self.gravity_displacement / factor,
            stop_epsilon=self.stop_epsilon / factor,
            initial_offset=self.initial_offset / factor,
        )


@dataclass
class Cloth:
    origin: tuple[float, float]
    resolution: float
    heights: np.ndarray  # (ny, nx), inverted frame
    movable: np.ndarray
    support: np.ndarray
    iterations: int

    def height_at(self, xy: np.ndarray) -> np.ndarray:
        """Bilinear cloth height (inverted frame) at XY locations."""
        gx = (xy[:, 0] - self.origin[0]) / self.resolution
        gy = (xy[:, 1] - self.origin[1]) / self.resolution
        ny, nx = self.heights.shape
        i0 = np.clip(np.floor(gx).astype(np.intp), 0, nx - 2)
        j0 = np.clip(np.floor(gy).astype(np.intp), 0, ny - 2)
        tx = gx - i0
        ty = gy - j0
        h = self.heights
        return (
            h[j0, i0] * (1 - tx) * (1 - ty)
            + h[j0, i0 + 1] * tx * (1 - ty)
            + h[j0 + 1, i0] * (1 - tx) * ty
            + h[j0 + 1, i0 + 1] * tx * ty
        )


def _move_factors(rigidity: int) -> tuple[float, float]:
    """Fraction of the height gap closed per spring visit after ``rigidity``
    bisection passes: one movable end, two movable ends."""
    return 1.0 - 0.7**rigidity, 0.5 * (1.0 - 0.4**rigidity)


@numba.njit(cache=True)
def _nearest_support(gx, gy, hz, nx, ny):
    """Height of the XY-nearest point for every particle (-inf when none)."""
    n = nx * ny
    best = np.full(n, np.inf)
    out = np.full(n, -np.inf)
    for p in range(gx.shape[0]):
        i = int(math.floor(gx[p] + 0.5))
        j = int(math.floor(gy[p] + 0.5))
        if i < 0 or j < 0 or i >= nx or j >= ny:
            continue
        d = (gx[p] - i) ** 2 + (gy[p] - j) ** 2
        c = j * nx + i
        if d < best[c]:
            best[c] = d
            out[c] = hz[p]
    return out


@numba.njit(cache=True)
def _simulate(support, nx, ny, start, gdisp, single, double, max_iter, eps, offsets):
    n = nx * ny
    pos = np.full(n, start)
    old = np.full(n, start)
    movable = np.ones(n, dtype=np.bool_)
    it = 0
    for it in range(1, max_iter + 1):
        for c in range(n):
            if movable[c]:
                tmp = pos[c]
                pos[c] = pos[c] + (pos[c] - old[c]) * (1.0 - DAMPING) - gdisp
                old[c] = tmp
        for j in range(ny):
            for i in range(nx):
                c = j * nx + i
                for k in range(offsets.shape[0]):
                    i2 = i + offsets[k, 0]
                    j2 = j + offsets[k, 1]
                    if i2 < 0 or j2 < 0 or i2 >= nx or j2 >= ny:
                        continue
                    c2 = j2 * nx + i2
                    corr = pos[c2] - pos[c]
                    if movable[c] and movable[c2]:
                        pos[c] += corr * double
                        pos[c2] -= corr * double
                    elif movable[c]:
                        pos[c] += corr * single
                    elif movable[c2]:
                        pos[c2] -= corr * single
        max_diff = 0.0
        any_movable = False
        for c in range(n):
            if movable[c]:
                any_movable = True
                d = abs(old[c] - pos[c])
                if d > max_diff:
                    max_diff = d
        for c in range(n):
            if movable[c] and pos[c] < support[c]:
                pos[c] = support[c]
                movable[c] = False
        if not any_movable or (max_diff != 0.0 and max_diff < eps):
            break
    return pos, movable, it


def simulate_cloth(cloud: np.ndarray, params: CsfParams) -> Cloth:
    """Drop the cloth on the inverted z-up ``cloud`` and return its final state."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3 or len(cloud) == 0:
        raise InvalidCloud("cloud must be a non-empty (N, 3) array")
    if not np.all(np.isfinite(cloud)):
        raise InvalidCloud("cloud contains non-finite coordinates")

    res = params.cloth_resolution
    inv_z = -cloud[:, 2]
    lo = cloud[:, :2].min(axis=0)
    hi = cloud[:, :2].max(axis=0)
    origin = lo - GRID_PADDING * res
    nx, ny = (np.floor((hi - lo) / res).astype(np.int64) + 2 * GRID_PADDING + 1)
    if nx * ny > 50_000_000:
        raise CsfFailed(f"cloth grid {nx}x{ny} too large; raise cloth_resolution")

    gx = (cloud[:, 0] - origin[0]) / res
    gy = (cloud[:, 1] - origin[1]) / res
    support = _nearest_support(gx, gy, inv_z, int(nx), int(ny)).reshape(ny, nx)
    empty = ~np.isfinite(support)
    if empty.any():
        idx = distance_transform_edt(empty, return_distances=False, return_indices=True)
        support = support[idx[0], idx[1]]

    single, double = _move_factors(params.rigidity)
    start = float(inv_z.max()) + params.initial_offset
    pos, movable, iters = _simulate(
        support.ravel(), int(nx), int(ny), start, params.gravity_displacement,
        single, double, params.max_iterations, params.stop_epsilon, _NEIGHBOUR_OFFSETS,
    )
    return Cloth(
        origin=(float(origin[0]), float(origin[1])),
        resolution=res,
        heights=pos.reshape(ny, nx),
        movable=movable.reshape(ny, nx),
        support=support,
        iterations=int(iters),
    )


def csf_classify(cloud: np.ndarray, params: CsfParams | None = None) -> np.ndarray:
    """Boolean ground label per point of a z-up cloud."""
    params = params or CsfParams()
    cloth = simulate_cloth(cloud, params)
    dist = np.abs(cloth.height_at(cloud[:, :2]) - (-cloud[:, 2]))
    return dist < params.class_threshold
