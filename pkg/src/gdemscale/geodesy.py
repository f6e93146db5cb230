"""WGS84 -> UTM conversion, local frame shifting and altitude synchronisation.

The Transverse Mercator mapping uses the Krueger series truncated at the
fourth power of the third flattening, which stays sub-millimetre inside a
UTM zone.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import SyncPointNotFound, UnsupportedLatitude

logger = logging.getLogger(__name__)

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563

UTM_K0 = 0.9996
UTM_FALSE_EASTING = 500000.0
UTM_FALSE_NORTHING_SOUTH = 10000000.0
UTM_MAX_LAT = 84.0

DEFAULT_SYNC_RADIUS = 50.0

_N = WGS84_F / (2.0 - WGS84_F)
_E = math.sqrt(WGS84_F * (2.0 - WGS84_F))
_E2 = WGS84_F * (2.0 - WGS84_F)
_A_RECT = WGS84_A / (1.0 + _N) * (1.0 + _N**2 / 4.0 + _N**4 / 64.0)

_ALPHA = (
    _N / 2 - 2 * _N**2 / 3 + 5 * _N**3 / 16 + 41 * _N**4 / 180,
    13 * _N**2 / 48 - 3 * _N**3 / 5 + 557 * _N**4 / 1440,
    61 * _N**3 / 240 - 103 * _N**4 / 140,
    49561 * _N**4 / 161280,
)
_BETA = (
    _N / 2 - 2 * _N**2 / 3 + 37 * _N**3 / 96 - _N**4 / 360,
    _N**2 / 48 + _N**3 / 15 - 437 * _N**4 / 1440,
    17 * _N**3 / 480 - 37 * _N**4 / 840,
    4397 * _N**4 / 161280,
)


@dataclass(frozen=True)
class GeodeticPoint:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class LocalMetricPoint:
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class GlobalShift:
    shift_x: float = 0.0
    shift_y: float = 0.0
    shift_z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.shift_x, self.shift_y, self.shift_z)):
            raise ValueError("global shift must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.shift_x, self.shift_y, self.shift_z])


@dataclass(frozen=True)
class UtmZone:
    number: int
    south: bool = False

    def __post_init__(self):
        if not 1 <= self.number <= 60:
            raise ValueError(f"UTM zone number {self.number} outside 1..60")

    @property
    def central_meridian(self) -> float:
        return -183.0 + 6.0 * self.number

    def __str__(self) -> str:
        return f"{self.number}{'S' if self.south else 'N'}"

    @classmethod
    def parse(cls, text: str | "UtmZone") -> "UtmZone":
        """Parse ``"32N"``, ``"34S"`` or ``"32"`` (north assumed)."""
        if isinstance(text, UtmZone):
            return text
        m = re.fullmatch(r"\s*(\d{1,2})\s*([NSns]?)\s*", str(text))
        if not m:
            raise ValueError(f"cannot parse UTM zone {text!r}")
        return cls(int(m.group(1)), m.group(2).upper() == "S")

    @classmethod
    def for_location(cls, latitude: float, longitude: float) -> "UtmZone":
        number = int(math.floor((longitude + 180.0) / 6.0)) % 60 + 1
        return cls(number, latitude < 0.0)


def zone_from_longitudes(latitudes, longitudes) -> UtmZone:
    """Zone covering the mean position of a set of geodetic samples."""
    return UtmZone.for_location(float(np.mean(latitudes)), float(np.mean(longitudes)))


def geodetic_to_utm(lat, lon, zone: UtmZone | str | None = None):
    """Forward Transverse Mercator projection into ``zone``.

    Works on scalars or arrays. Returns ``(easting, northing)`` in metres.
    When ``zone`` is None it is derived from the first sample.
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(np.abs(lat) > UTM_MAX_LAT):
        raise UnsupportedLatitude(f"UTM is defined for |latitude| <= {UTM_MAX_LAT}")
    if zone is None:
        zone = UtmZone.for_location(float(lat.flat[0]), float(lon.flat[0]))
    zone = UtmZone.parse(zone)

    dlon = np.radians((lon - zone.central_meridian + 180.0) % 360.0 - 180.0)
    if np.any(np.abs(dlon) > math.radians(3.5)):
        logger.warning("longitude outside zone %s; accuracy degrades away from the zone", zone)
    phi = np.radians(lat)

    sin_phi = np.sin(phi)
    tau_c = np.sinh(np.arctanh(sin_phi) - _E * np.arctanh(_E * sin_phi))
    xi_p = np.arctan2(tau_c, np.cos(dlon))
    eta_p = np.arctanh(np.sin(dlon) / np.sqrt(1.0 + tau_c**2))

    xi = xi_p.copy()
    eta = eta_p.copy()
    for j, a in enumerate(_ALPHA, start=1):
        xi = xi + a * np.sin(2 * j * xi_p) * np.cosh(2 * j * eta_p)
        eta = eta + a * np.cos(2 * j * xi_p) * np.sinh(2 * j * eta_p)

    easting = UTM_FALSE_EASTING + UTM_K0 * _A_RECT * eta
    northing = UTM_K0 * _A_RECT * xi
    if zone.south:
        northing = northing + UTM_FALSE_NORTHING_SOUTH
    if easting.ndim == 0:
        return float(easting), float(northing)
    return easting, northing


def utm_to_geodetic(easting, northing, zone: UtmZone | str):
    """Inverse projection. Used to validate the forward mapping."""
    zone = UtmZone.parse(zone)
    e = np.asarray(easting, dtype=np.float64)
    n = np.asarray(northing, dtype=np.float64)
    if zone.south:
        n = n - UTM_FALSE_NORTHING_SOUTH
    xi = n / (UTM_K0 * _A_RECT)
    eta = (e - UTM_FALSE_EASTING) / (UTM_K0 * _A_RECT)

    xi_p = xi.copy()
    eta_p = eta.copy()
    for j, b in enumerate(_BETA, start=1):
        xi_p = xi_p - b * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_p = eta_p - b * np.cos(2 * j * xi) * np.sinh(2 * j * eta)

    tau_p = np.sin(xi_p) / np.sqrt(np.sinh(eta_p) ** 2 + np.cos(xi_p) ** 2)
    dlon = np.arctan2(np.sinh(eta_p), np.cos(xi_p))

    # Newton iteration for tan(phi) from the conformal tan
    tau = tau_p.copy()
    for _ in range(6):
        sig = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1.0 + tau**2)))
        tau_i = tau * np.sqrt(1.0 + sig**2) - sig * np.sqrt(1.0 + tau**2)
        dtau = (
            (tau_p - tau_i)
            / np.sqrt(1.0 + tau_i**2)
            * (1.0 + (1.0 - _E2) * tau**2)
            / ((1.0 - _E2) * np.sqrt(1.0 + tau**2))
        )
        tau = tau + dtau
        if np.all(np.abs(dtau) < 1e-14):
            break

    lat = np.degrees(np.arctan(tau))
    lon = zone.central_meridian + np.degrees(dlon)
    if lat.ndim == 0:
        return float(lat), float(lon)
    return lat, lon


def apply_global_shift(e, n, alt, shift: GlobalShift) -> LocalMetricPoint:
    return LocalMetricPoint(e - shift.shift_x, n - shift.shift_y, alt - shift.shift_z)


def shift_points(points: np.ndarray, shift: GlobalShift) -> np.ndarray:
    """Vectorised :func:`apply_global_shift` over an (N, 3) array."""
    return np.asarray(points, dtype=np.float64) - shift.as_array()


def altitude_sync(reference_height: float, reference_xy, gdem, radius: float = DEFAULT_SYNC_RADIUS) -> float:
    """Vertical offset mapping relative UAV heights onto the GDEM datum.

    The GDEM point horizontally closest to ``reference_xy`` supplies the
    ground altitude; the returned shift is that altitude minus the known
    relative height at the reference position. Ties go to the lowest index.
    """
    pts = getattr(gdem, "points", gdem)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.size == 0:
        raise SyncPointNotFound("GDEM is empty")
    xy = np.asarray(
        (reference_xy.x, reference_xy.y) if isinstance(reference_xy, LocalMetricPoint) else reference_xy,
        dtype=np.float64,
    )[:2]
    d2 = np.sum((pts[:, :2] - xy) ** 2, axis=1)
    i = int(np.argmin(d2))
    if d2[i] > radius * radius:
        raise SyncPointNotFound(
            f"nearest GDEM point is {math.sqrt(d2[i]):.1f} m away (radius {radius} m)"
        )
    return float(pts[i, 2] - reference_height)
