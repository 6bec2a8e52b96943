"""Bing-style quadtree tile math on the Web Mercator projection.

Zoom-14 tiles are the ~2.4 km analysis cells used throughout the
pipeline; zoom-13 parents are the 4.8 km cells used when pooling small
populations, and so on up the quadtree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from wealthmap.exceptions import InvalidInputError

MIN_ZOOM = 1
MAX_ZOOM = 23
ANALYSIS_ZOOM = 14

# Web Mercator latitude limit: the projection maps this to the unit square edge.
MERCATOR_LAT_LIMIT = 85.05112878

# IUGG mean Earth radius.
EARTH_RADIUS_KM = 6371.0088

_QUADKEY_DIGITS = frozenset("0123")


@dataclass(frozen=True)
class LatLon:
    """A geographic point, clamped into the Web Mercator domain on construction.

    Latitude is clamped to [-85.05112878, +85.05112878]; longitude is
    normalized into [-180, 180), so +180 wraps to -180.
    """

    lat: float
    lon: float

    def __init__(self, lat: float, lon: float):
        lat = float(lat)
        lon = float(lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidInputError(f"non-finite coordinates ({lat}, {lon})")
        lat = min(max(lat, -MERCATOR_LAT_LIMIT), MERCATOR_LAT_LIMIT)
        lon = (lon + 180.0) % 360.0 - 180.0
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True, order=True)
class TileId:
    """A quadtree tile address: zoom level plus column (x) and row (y)."""

    zoom: int
    x: int
    y: int

    def __post_init__(self):
        if not MIN_ZOOM <= self.zoom <= MAX_ZOOM:
            raise InvalidInputError(f"zoom {self.zoom} outside [{MIN_ZOOM}, {MAX_ZOOM}]")
        n = 1 << self.zoom
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise InvalidInputError(f"tile ({self.x}, {self.y}) outside zoom-{self.zoom} grid")


def latlon_to_tile(p: LatLon, zoom: int) -> TileId:
    """Return the tile whose Mercator unit square contains ``p``."""
    if not MIN_ZOOM <= zoom <= MAX_ZOOM:
        raise InvalidInputError(f"zoom {zoom} outside [{MIN_ZOOM}, {MAX_ZOOM}]")
    n = 1 << zoom
    fx = (p.lon + 180.0) / 360.0
    sin_lat = math.sin(math.radians(p.lat))
    fy = 0.5 - math.log((1.0 + sin_lat) / (1.0 - sin_lat)) / (4.0 * math.pi)
    x = min(max(int(math.floor(fx * n)), 0), n - 1)
    y = min(max(int(math.floor(fy * n)), 0), n - 1)
    return TileId(zoom, x, y)


def quadkey(t: TileId) -> str:
    """Encode a tile as its base-4 quadkey, one digit per zoom level."""
    digits = []
    for i in range(t.zoom, 0, -1):
        mask = 1 << (i - 1)
        d = 0
        if t.x & mask:
            d += 1
        if t.y & mask:
            d += 2
        digits.append(str(d))
    return "".join(digits)


def parse_quadkey(s: str) -> TileId:
    """Decode a quadkey string; inverse of :func:`quadkey`."""
    if not s:
        raise InvalidInputError("empty quadkey")
    if not set(s) <= _QUADKEY_DIGITS:
        raise InvalidInputError(f"quadkey {s!r} contains characters outside 0-3")
    if len(s) > MAX_ZOOM:
        raise InvalidInputError(f"quadkey {s!r} longer than {MAX_ZOOM} digits")
    x = y = 0
    for ch in s:
        d = ord(ch) - ord("0")
        x = (x << 1) | (d & 1)
        y = (y << 1) | (d >> 1)
    return TileId(len(s), x, y)


def parent(t: TileId) -> TileId:
    if t.zoom < 2:
        raise InvalidInputError(f"tile at zoom {t.zoom} has no parent")
    return TileId(t.zoom - 1, t.x >> 1, t.y >> 1)


def ancestor(t: TileId, zoom: int) -> TileId:
    """The tile's containing tile at a coarser zoom level."""
    if not MIN_ZOOM <= zoom <= t.zoom:
        raise InvalidInputError(f"zoom {zoom} is not an ancestor level of zoom {t.zoom}")
    shift = t.zoom - zoom
    return TileId(zoom, t.x >> shift, t.y >> shift)


def children(t: TileId) -> list[TileId]:
    if t.zoom > MAX_ZOOM - 1:
        raise InvalidInputError(f"tile at zoom {t.zoom} has no children")
    z = t.zoom + 1
    return [
        TileId(z, 2 * t.x, 2 * t.y),
        TileId(z, 2 * t.x + 1, 2 * t.y),
        TileId(z, 2 * t.x, 2 * t.y + 1),
        TileId(z, 2 * t.x + 1, 2 * t.y + 1),
    ]


def _inverse_mercator_lat(fy: float) -> float:
    # fy is the fractional y position in [0, 1]; 0 is the north edge.
    return 90.0 - 360.0 * math.atan(math.exp(-(0.5 - fy) * 2.0 * math.pi)) / math.pi


def tile_center(t: TileId) -> LatLon:
    n = 1 << t.zoom
    lon = (t.x + 0.5) / n * 360.0 - 180.0
    lat = _inverse_mercator_lat((t.y + 0.5) / n)
    return LatLon(lat, lon)


def tile_bounds(t: TileId) -> tuple[float, float, float, float]:
    """Tile bounding box as (west, south, east, north) in degrees."""
    n = 1 << t.zoom
    west = t.x / n * 360.0 - 180.0
    east = (t.x + 1) / n * 360.0 - 180.0
    north = _inverse_mercator_lat(t.y / n)
    south = _inverse_mercator_lat((t.y + 1) / n)
    return west, south, east, north


def haversine_km(a: LatLon, b: LatLon) -> float:
    """Great-circle distance in kilometers."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    s = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    s = min(max(s, 0.0), 1.0)
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(s))


def haversine_km_arrays(lat1, lon1, lat2, lon2):
    """Elementwise great-circle distance over numpy arrays of degrees."""
    import numpy as np

    phi1 = np.radians(np.asarray(lat1, dtype=float))
    phi2 = np.radians(np.asarray(lat2, dtype=float))
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    s = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))
