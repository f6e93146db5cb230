"""Terrain point cloud storage, 2.5D triangulation and densification."""

from __future__ import annotations

import io
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import DegenerateTerrain, EmptyDensificationWarning, FormatError
from .geodesy import GlobalShift, UtmZone, geodetic_to_utm, shift_points, zone_from_longitudes

logger = logging.getLogger(__name__)

DEFAULT_DENSITY = 0.05  # points per square metre

MAGIC = b"TDGD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQdQ")


@dataclass(frozen=True)
class GdemCloud:
    """Terrain samples in the local metric frame, shape (N, 3)."""

    points: np.ndarray
    density_pts_per_m2: float | None = None
    seed: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("GDEM points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def source_tag(self) -> str:
        return "raw" if self.density_pts_per_m2 is None else "densified"

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class TriangulatedSurface:
    vertices: np.ndarray
    triangles: np.ndarray

    def xy_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i], :2] for i in range(3))
        ab = b - a
        ac = c - a
        return 0.5 * np.abs(ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])

    def interpolate(self, xy: np.ndarray) -> np.ndarray:
        """Piecewise-linear height at ``xy``; NaN outside the hull."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        return _TriLookup(self)(xy)


class _TriLookup:
    def __init__(self, surface: TriangulatedSurface):
        self.surface = surface
        self.dl = Delaunay(surface.vertices[:, :2])

    def __call__(self, xy):
        simplex = self.dl.find_simplex(xy)
        out = np.full(len(xy), np.nan)
        ok = simplex >= 0
        t = self.dl.transform[simplex[ok]]
        b = np.einsum("nij,nj->ni", t[:, :2], xy[ok] - t[:, 2])
        bary = np.column_stack([b, 1.0 - b.sum(axis=1)])
        z = self.surface.vertices[self.dl.simplices[simplex[ok]], 2]
        out[ok] = np.sum(bary * z, axis=1)
        return out


def triangulate_2_5d(raw: GdemCloud | np.ndarray) -> TriangulatedSurface:
    """Delaunay triangulation of the XY projections; heights ride along."""
    pts = np.asarray(getattr(raw, "points", raw), dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateTerrain(f"need at least 3 points, got {len(pts)}")
    try:
        dl = Delaunay(pts[:, :2])
    except QhullError as exc:
        raise DegenerateTerrain("terrain points are collinear or coincident") from exc
    return TriangulatedSurface(vertices=pts.copy(), triangles=dl.simplices.astype(np.int64))


def densify(surface: TriangulatedSurface, density: float = DEFAULT_DENSITY, seed: int = 0) -> GdemCloud:
    """Sample ``density`` points per square metre uniformly over the surface.

    Triangles are drawn with probability proportional to their XY area and a
    point is placed uniformly inside each drawn triangle. The point count is
    the expected count rounded stochastically, so it is exact on average.
    """
    if not density > 0:
        raise ValueError("density must be positive")
    areas = surface.xy_areas()
    usable = areas > 0
    total = float(areas[usable].sum())
    expected = total * density
    if expected < 1.0:
        warnings.warn(
            f"densification at {density} pts/m2 over {total:.1f} m2 yields no points; using raw points",
            EmptyDensificationWarning,
            stacklevel=2,
        )
        return GdemCloud(surface.vertices)

    rng = np.random.Generator(np.random.Philox(seed))
    count = int(np.floor(expected))
    if rng.random() < expected - count:
        count += 1

    tri_idx = np.flatnonzero(usable)
    p = areas[tri_idx] / total
    chosen = tri_idx[rng.choice(len(tri_idx), size=count, p=p)]

    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    corners = surface.vertices[surface.triangles[chosen]]  # (count, 3, 3)
    a = corners[:, 0]
    # offsets from a corner keep flat triangles exactly flat
    pts = a + (r1 * (1.0 - r2))[:, None] * (corners[:, 1] - a) + (r1 * r2)[:, None] * (corners[:, 2] - a)
    logger.info("densified %d triangles into %d points (%.3f pts/m2)", len(tri_idx), count, density)
    return GdemCloud(pts, density_pts_per_m2=float(density), seed=int(seed))


def densify_cloud(raw: GdemCloud, density: float = DEFAULT_DENSITY, seed: int = 0) -> GdemCloud:
    return densify(triangulate_2_5d(raw), density, seed)


def terrain_height(cloud: GdemCloud, xy) -> float:
    """Height of the GDEM sample horizontally closest to ``xy``."""
    _, i = cKDTree(cloud.points[:, :2]).query(np.asarray(xy, dtype=np.float64)[:2])
    return float(cloud.points[i, 2])


# persistence ---------------------------------------------------------------


def save_gdem(cloud: GdemCloud, path) -> None:
    density = 0.0 if cloud.density_pts_per_m2 is None else cloud.density_pts_per_m2
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, int(cloud.seed), float(density), len(cloud.points))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(cloud.points, dtype="<f8").tobytes())


def load_gdem(path) -> GdemCloud:
    data = Path(path).read_bytes()
    return parse_gdem(data)


def parse_gdem(data: bytes) -> GdemCloud:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("bad magic, expected b'TDGD'", 0)
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", len(data))
    _, version, seed, density, count = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    expected = _HEADER.size + count * 24
    if len(data) != expected:
        # count field and payload disagree
        raise FormatError(f"count {count} needs {expected} bytes, file has {len(data)}", 28)
    pts = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(-1, 3).astype(np.float64)
    bad = ~np.isfinite(pts)
    if bad.any():
        flat = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError("non-finite coordinate", _HEADER.size + 8 * flat)
    return GdemCloud(pts, density_pts_per_m2=density if density > 0 else None, seed=seed)


def read_xyz(path, geodetic: bool = False, zone: UtmZone | str | None = None,
             shift: GlobalShift | None = None) -> tuple[GdemCloud, UtmZone | None]:
    return parse_xyz(Path(path).read_text(), geodetic=geodetic, zone=zone, shift=shift)


def parse_xyz(text: str, geodetic: bool = False, zone: UtmZone | str | None = None,
              shift: GlobalShift | None = None) -> tuple[GdemCloud, UtmZone | None]:
    """Parse whitespace-separated triples, ``#`` starts a comment.

    Geodetic input is ``lon lat alt`` and is projected to UTM (zone derived
    from the mean position unless given). The global shift, if any, is
    subtracted last.
    """
    rows = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 3 values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    used_zone = None
    if geodetic and len(pts):
        lon, lat = pts[:, 0], pts[:, 1]
        used_zone = UtmZone.parse(zone) if zone is not None else zone_from_longitudes(lat, lon)
        e, n = geodetic_to_utm(lat, lon, used_zone)
        pts = np.column_stack([e, n, pts[:, 2]])
    if shift is not None:
        pts = shift_points(pts, shift)
    return GdemCloud(pts), used_zone


def write_xyz(cloud: GdemCloud, path) -> None:
    np.savetxt(path, cloud.points, fmt="%.6f", header="x y z")
