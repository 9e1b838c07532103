"""Lambert-93 (EPSG:2154) coordinate handling.

Centering of planar coordinates around the corpus median, and the
ellipsoidal Lambert Conformal Conic (2SP) inverse that maps planar
easting/northing to geodetic longitude/latitude (EPSG:4326).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import (
    ConfigError,
    InvalidCoordinateError,
    OutOfDomainError,
    ProjectionConvergenceError,
)

MEDIAN_EASTING = 489353.59
MEDIAN_NORTHING = 6587552.20

LATITUDE_TOLERANCE = 1e-12  # radians
MAX_ITERATIONS = 50


class Epsg2154Coord(NamedTuple):
    easting: float
    northing: float


class CenteredCoord(NamedTuple):
    easting_c: float
    northing_c: float


class Wgs84Coord(NamedTuple):
    lon_deg: float
    lat_deg: float


@dataclass(frozen=True)
class LccParams:
    semi_major_axis: float
    inverse_flattening: float
    lat_false_origin: float
    lon_false_origin: float
    std_parallel_1: float
    std_parallel_2: float
    false_easting: float
    false_northing: float

    def __post_init__(self):
        if not self.semi_major_axis > 0:
            raise ConfigError("semi_major_axis must be positive")
        if not self.inverse_flattening > 1:
            raise ConfigError("inverse_flattening must exceed 1")
        if self.std_parallel_1 == -self.std_parallel_2:
            raise ConfigError("standard parallels symmetric about the equator: cone constant undefined")

    @property
    def eccentricity(self) -> float:
        f = 1.0 / self.inverse_flattening
        return math.sqrt(f * (2.0 - f))


LAMBERT_93 = LccParams(
    semi_major_axis=6378137.0,
    inverse_flattening=298.257222101,
    lat_false_origin=46.5,
    lon_false_origin=3.0,
    std_parallel_1=44.0,
    std_parallel_2=49.0,
    false_easting=700000.0,
    false_northing=6600000.0,
)


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidCoordinateError(f"non-finite coordinate component: {v!r}")


def center_coordinate(
    c: Epsg2154Coord,
    median_easting: float = MEDIAN_EASTING,
    median_northing: float = MEDIAN_NORTHING,
) -> CenteredCoord:
    """Shift a Lambert-93 pair so the corpus median sits at the origin."""
    _check_finite(c[0], c[1])
    return CenteredCoord(c[0] - median_easting, c[1] - median_northing)


class _ConeConstants(NamedTuple):
    e: float
    n: float
    aF: float
    r_origin: float


def _m(phi: float, e: float) -> float:
    s = math.sin(phi)
    return math.cos(phi) / math.sqrt(1.0 - e * e * s * s)


def _t(phi: float, e: float) -> float:
    s = math.sin(phi)
    return math.tan(math.pi / 4.0 - phi / 2.0) / ((1.0 - e * s) / (1.0 + e * s)) ** (e / 2.0)


def cone_constants(p: LccParams) -> _ConeConstants:
    """Cone constant n, scaled mapping radius a*F and radius at the false origin."""
    e = p.eccentricity
    phi1 = math.radians(p.std_parallel_1)
    phi2 = math.radians(p.std_parallel_2)
    phi_f = math.radians(p.lat_false_origin)
    m1, m2 = _m(phi1, e), _m(phi2, e)
    t1, t2, t_f = _t(phi1, e), _t(phi2, e), _t(phi_f, e)
    if phi1 == phi2:
        n = math.sin(phi1)
    else:
        n = (math.log(m1) - math.log(m2)) / (math.log(t1) - math.log(t2))
    big_f = m1 / (n * t1**n)
    a_f = p.semi_major_axis * big_f
    return _ConeConstants(e, n, a_f, a_f * t_f**n)


def lcc_inverse(p: LccParams, e: float, n: float) -> Wgs84Coord:
    """Planar (easting, northing) in meters to geodetic (lon, lat) in degrees.

    Latitude is recovered by fixed-point iteration on the conformal
    latitude relation until successive iterates differ by less than
    ``LATITUDE_TOLERANCE`` radians.
    """
    _check_finite(e, n)
    k = cone_constants(p)
    dx = e - p.false_easting
    dy = k.r_origin - (n - p.false_northing)
    sign = 1.0 if k.n > 0 else -1.0
    r = sign * math.hypot(dx, dy)
    if sign * r <= 0.0:
        raise OutOfDomainError(f"mapping radius vanishes at ({e}, {n}): cone apex")
    if k.n > 0:
        theta = math.atan2(dx, dy)
    else:
        theta = math.atan2(-dx, -dy)
    t = (r / k.aF) ** (1.0 / k.n)
    if not t > 0.0 or not math.isfinite(t):
        raise OutOfDomainError(f"isometric latitude argument out of range at ({e}, {n})")

    half_e = k.e / 2.0
    phi = math.pi / 2.0 - 2.0 * math.atan(t)
    for _ in range(MAX_ITERATIONS):
        s = k.e * math.sin(phi)
        nxt = math.pi / 2.0 - 2.0 * math.atan(t * ((1.0 - s) / (1.0 + s)) ** half_e)
        if abs(nxt - phi) < LATITUDE_TOLERANCE:
            phi = nxt
            break
        phi = nxt
    else:
        raise ProjectionConvergenceError(
            f"latitude iteration did not converge in {MAX_ITERATIONS} steps at ({e}, {n})"
        )

    lon = math.degrees(theta / k.n) + p.lon_false_origin
    lon = (lon + 180.0) % 360.0 - 180.0
    return Wgs84Coord(lon, math.degrees(phi))


def transform_2154_to_4326(c: CenteredCoord, params: LccParams = LAMBERT_93) -> Wgs84Coord:
    """Project a centered pair to EPSG:4326.

    The centered values go into the inverse projection unmodified, so the
    result is the geodetic position of the offset vector measured from
    the projection's own planar origin, not of the original point.
    """
    _check_finite(c[0], c[1])
    return lcc_inverse(params, c[0], c[1])
