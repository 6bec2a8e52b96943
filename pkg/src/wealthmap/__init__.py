"""Micro-regional wealth estimation toolkit.

Turns per-tile features and household survey data into relative wealth
maps with per-tile error estimates, absolute-wealth conversions, and
budget-constrained targeting simulations.
"""

__version__ = "0.1.0"

from wealthmap.exceptions import (
    DegenerateInputError,
    InvalidInputError,
    SchemaError,
    UndefinedMetricError,
    WealthmapError,
)
from wealthmap.tilegrid import LatLon, TileId

__all__ = [
    "DegenerateInputError",
    "InvalidInputError",
    "LatLon",
    "SchemaError",
    "TileId",
    "UndefinedMetricError",
    "WealthmapError",
    "__version__",
]
