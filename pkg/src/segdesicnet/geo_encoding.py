"""GRID multi-scale sinusoidal encoding of geodetic positions.

A location (lon, lat) is expanded into ``S`` scale blocks of
``[sin(lon/a_s), cos(lon/a_s), sin(lat/a_s), cos(lat/a_s)]`` with the
scales ``a_s`` following a geometric progression from ``lambda_min`` to
``lambda_max``. The concatenated vector is then divided by its norm and
compared to a prediction by cosine dissimilarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geodesy
from .errors import (
    ConfigError,
    DegenerateVectorError,
    InvalidCoordinateError,
    ShapeError,
)

NORM_KINDS = ("l1", "l2")
ANGLE_UNITS = ("degrees", "radians")


@dataclass(frozen=True)
class GridConfig:
    lambda_min: float = 0.01
    lambda_max: float = 0.00001
    num_scales: int = 16
    angle_unit: str = "degrees"
    norm_kind: str = "l1"

    def __post_init__(self):
        if not (self.lambda_min > 0 and self.lambda_max > 0):
            raise ConfigError("grid scales must be positive")
        if self.lambda_min == self.lambda_max:
            raise ConfigError("lambda_min and lambda_max must differ")
        if int(self.num_scales) != self.num_scales or self.num_scales < 2:
            raise ConfigError(f"num_scales must be an integer >= 2, got {self.num_scales!r}")
        if self.angle_unit not in ANGLE_UNITS:
            raise ConfigError(f"angle_unit must be one of {ANGLE_UNITS}")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"norm_kind must be one of {NORM_KINDS}")

    @property
    def dim(self) -> int:
        return 4 * self.num_scales

    def scales(self) -> np.ndarray:
        return np.array([scale_factor(self, s) for s in range(self.num_scales)])


@dataclass(frozen=True)
class GridEncoding:
    values: np.ndarray = field(repr=False)
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EncoderSettings:
    """Everything needed to turn a raw Lambert-93 pair into a target vector."""

    grid: GridConfig = GridConfig()
    median_easting: float = geodesy.MEDIAN_EASTING
    median_northing: float = geodesy.MEDIAN_NORTHING
    center_before_transform: bool = True


def scale_factor(cfg: GridConfig, s: int) -> float:
    last = cfg.num_scales - 1
    if not 0 <= s <= last:
        raise IndexError(f"scale index {s} outside [0, {last}]")
    if s == 0:
        return cfg.lambda_min
    if s == last:
        return cfg.lambda_max
    g = cfg.lambda_max / cfg.lambda_min
    return cfg.lambda_min * g ** (s / last)


def grid_encode(cfg: GridConfig, lon: float, lat: float) -> GridEncoding:
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise InvalidCoordinateError(f"non-finite position ({lon!r}, {lat!r})")
    if cfg.angle_unit == "radians":
        lon, lat = math.radians(lon), math.radians(lat)
    out = np.empty(cfg.dim)
    for s in range(cfg.num_scales):
        a = scale_factor(cfg, s)
        u, v = lon / a, lat / a
        out[4 * s : 4 * s + 4] = (math.sin(u), math.cos(u), math.sin(v), math.cos(v))
    return GridEncoding(out, normalized=False)


def normalize_vector(v: np.ndarray, norm_kind: str = "l1") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.abs(v).sum() if norm_kind == "l1" else math.sqrt(float(v @ v))
    if not norm > 0:
        raise DegenerateVectorError("cannot normalize an all-zero encoding")
    return v / norm


def normalize_encoding(e: GridEncoding, norm_kind: str = "l1") -> GridEncoding:
    return GridEncoding(normalize_vector(e.values, norm_kind), normalized=True)


def cosine_dissimilarity(c, c_hat) -> float:
    """``1 - cos(angle(c, c_hat))``, in [0, 2]."""
    a = np.asarray(c, dtype=np.float64).ravel()
    b = np.asarray(c_hat, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine dissimilarity of a zero vector")
    cos = float(a @ b) / (na * nb)
    return 1.0 - min(1.0, max(-1.0, cos))


def geodetic_position(settings: EncoderSettings, raw: geodesy.Epsg2154Coord) -> geodesy.Wgs84Coord:
    if settings.center_before_transform:
        centered = geodesy.center_coordinate(raw, settings.median_easting, settings.median_northing)
        return geodesy.transform_2154_to_4326(centered)
    # centering applied after projection, in degrees, relative to the median point
    pos = geodesy.lcc_inverse(geodesy.LAMBERT_93, raw[0], raw[1])
    ref = geodesy.lcc_inverse(geodesy.LAMBERT_93, settings.median_easting, settings.median_northing)
    return geodesy.Wgs84Coord(pos.lon_deg - ref.lon_deg, pos.lat_deg - ref.lat_deg)


def encode_pipeline(cfg: GridConfig | EncoderSettings, raw: geodesy.Epsg2154Coord) -> GridEncoding:
    """Raw Lambert-93 pair to the normalized GRID target vector."""
    settings = cfg if isinstance(cfg, EncoderSettings) else EncoderSettings(grid=cfg)
    pos = geodetic_position(settings, raw)
    enc = grid_encode(settings.grid, pos.lon_deg, pos.lat_deg)
    return normalize_encoding(enc, settings.grid.norm_kind)
