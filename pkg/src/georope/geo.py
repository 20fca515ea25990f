"""Positions on the sphere, geotokens and the geometric helpers built on them.

Angles are stored in radians (double precision). Degrees only appear at the
I/O boundary (:func:`make_position`, the file loaders and the CLI).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HALF_PI = math.pi / 2
EARTH_RADIUS_M = 6_371_000.0


class GeoError(ValueError):
    """Invalid geographic input (bad latitude, bad feature vector, ...)."""


def wrap_lon_deg(lon_deg: float) -> float:
    """Wrap a longitude in degrees into [-180, 180)."""
    w = math.fmod(lon_deg + 180.0, 360.0)
    if w < 0.0:
        w += 360.0
    w -= 180.0
    # fmod can land exactly on 360 - 0 after the shift for tiny negatives
    if w >= 180.0:
        w -= 360.0
    return w


def wrap_lon(lon: float) -> float:
    """Wrap a longitude in radians into [-pi, pi)."""
    if -math.pi <= lon < math.pi:
        return lon
    w = lon - 2.0 * math.pi * math.floor((lon + math.pi) / (2.0 * math.pi))
    if w >= math.pi:
        w -= 2.0 * math.pi
    if w < -math.pi:
        w = -math.pi
    return w


@dataclass(frozen=True)
class GeoPosition:
    """A point on the sphere: latitude in [-pi/2, pi/2], longitude in [-pi, pi)."""

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise GeoError(f"non-finite position lat={self.lat!r} lon={self.lon!r}")
        if not -HALF_PI <= lat <= HALF_PI:
            raise GeoError(f"latitude {lat!r} rad outside [-pi/2, pi/2]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", wrap_lon(lon))

    @property
    def lat_deg(self) -> float:
        return math.degrees(self.lat)

    @property
    def lon_deg(self) -> float:
        return math.degrees(self.lon)

    def unit_vector(self) -> np.ndarray:
        cl = _cos_lat(self.lat)
        return np.array([cl * math.cos(self.lon), cl * math.sin(self.lon), math.sin(self.lat)])


@dataclass(frozen=True)
class SphereModel:
    radius: float = EARTH_RADIUS_M

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise GeoError(f"sphere radius must be positive, got {self.radius!r}")


UNIT_SPHERE = SphereModel(1.0)
EARTH = SphereModel()


@dataclass(frozen=True)
class Geotoken:
    """A feature vector attached to a point on the globe."""

    id: str
    position: GeoPosition
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        if f.ndim != 1 or f.size == 0:
            raise GeoError(f"geotoken {self.id!r}: features must be a non-empty 1-D vector")
        if not np.all(np.isfinite(f)):
            raise GeoError(f"geotoken {self.id!r}: non-finite feature value")
        f.flags.writeable = False
        object.__setattr__(self, "features", f)

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def check_dim(self, dim: int) -> None:
        if self.dim != dim:
            raise GeoError(f"geotoken {self.id!r} has {self.dim} features, model dimension is {dim}")


def make_position(lat_deg: float, lon_deg: float) -> GeoPosition:
    """Build a position from degrees. Longitude wraps, latitude must lie in [-90, 90]."""
    lat_deg = float(lat_deg)
    lon_deg = float(lon_deg)
    if not math.isfinite(lat_deg) or not -90.0 <= lat_deg <= 90.0:
        raise GeoError(f"latitude {lat_deg!r} deg outside [-90, 90]")
    if not math.isfinite(lon_deg):
        raise GeoError(f"longitude {lon_deg!r} is not finite")
    lat = min(max(math.radians(lat_deg), -HALF_PI), HALF_PI)
    return GeoPosition(lat, wrap_lon(math.radians(wrap_lon_deg(lon_deg))))


def _cos_lat(lat: float) -> float:
    # cos(pi/2) is 6e-17 in floating point; make the poles exact so longitude
    # does not leak into distances there.
    return 0.0 if abs(lat) == HALF_PI else math.cos(lat)


def great_circle_distance(a: GeoPosition, b: GeoPosition, sphere: SphereModel = EARTH) -> float:
    """Haversine distance between two positions, in the units of ``sphere.radius``."""
    s_lat = math.sin((b.lat - a.lat) / 2.0)
    s_lon = math.sin((b.lon - a.lon) / 2.0)
    h = s_lat * s_lat + (_cos_lat(a.lat) * _cos_lat(b.lat)) * (s_lon * s_lon)
    h = min(max(h, 0.0), 1.0)
    return 2.0 * sphere.radius * math.asin(math.sqrt(h))


def pairwise_distances(lat: np.ndarray, lon: np.ndarray, sphere: SphereModel = EARTH) -> np.ndarray:
    """Haversine distance matrix for arrays of radians with shape (..., n) -> (..., n, n)."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    cl = np.where(np.abs(lat) == HALF_PI, 0.0, np.cos(lat))
    s_lat = np.sin((lat[..., None, :] - lat[..., :, None]) / 2.0)
    s_lon = np.sin((lon[..., None, :] - lon[..., :, None]) / 2.0)
    h = s_lat**2 + (cl[..., :, None] * cl[..., None, :]) * s_lon**2
    return 2.0 * sphere.radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def sample_uniform_arrays(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform (lat, lon) arrays in radians drawn from ``rng``."""
    lat = np.arcsin(rng.uniform(-1.0, 1.0, size=n))
    lon = rng.uniform(-math.pi, math.pi, size=n)
    return lat, lon


def sample_uniform_sphere(n: int, seed: int) -> list[GeoPosition]:
    """``n`` area-uniform positions; the same seed always gives the same list."""
    if n < 0:
        raise GeoError(f"sample count must be non-negative, got {n}")
    if n == 0:
        return []
    lat, lon = sample_uniform_arrays(n, np.random.default_rng(seed))
    return [GeoPosition(float(a), float(o)) for a, o in zip(lat, lon)]
