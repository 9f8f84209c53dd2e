"""Domain vocabulary shared by every stage of the pipeline.

Angles are kept in degrees everywhere and only converted to radians inside
trigonometric kernels. The Earth is a sphere of radius 6,371 km; the route is
short enough that ellipsoidal corrections do not matter.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


class RouteSegment(str, enum.Enum):
    NORTH = "North"
    MIDDLE = "Middle"
    SOUTH = "South"
    DIRECT = "Direct"


class SpeedMode(str, enum.Enum):
    CRUISING = "Cruising"
    MANEUVERING = "Maneuvering"


class WeatherState(str, enum.Enum):
    CALM = "Calm"
    MODERATE = "Moderate"
    ROUGH = "Rough"


WEATHER_STATES = (WeatherState.CALM, WeatherState.MODERATE, WeatherState.ROUGH)


class Direction(str, enum.Enum):
    SOUTHBOUND = "Southbound"
    NORTHBOUND = "Northbound"


class VoyageError(ValueError):
    """A voyage (or a track meant to become one) is unusable."""


@dataclass(frozen=True)
class Record:
    """One resampled observation of the vessel and its surroundings."""

    timestamp: float
    lat: float
    lon: float
    sog: float
    heading: float
    fuel_rate: float
    # weather fields are NaN until fused from hindcast grids
    wind_speed: float = math.nan
    wind_dir: float = math.nan
    wave_height: float = math.nan
    wave_dir: float = math.nan
    current_speed: float = math.nan
    current_dir: float = math.nan
    voyage_id: Optional[str] = None
    segment: Optional[RouteSegment] = None
    speed_mode: Optional[SpeedMode] = None

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        for name in ("sog", "fuel_rate", "wind_speed", "wave_height", "current_speed"):
            value = getattr(self, name)
            if value < 0.0 or (name in ("sog", "fuel_rate") and not value >= 0.0):
                raise ValueError(f"{name} must be non-negative, got {value}")
        for name in ("heading", "wind_dir", "wave_dir", "current_dir"):
            value = getattr(self, name)
            if value < 0.0 or value >= 360.0 or (name == "heading" and math.isnan(value)):
                raise ValueError(f"{name} must lie in [0, 360), got {value}")


# Numeric Record fields, in a fixed order used by array views and CSV files.
NUMERIC_FIELDS = (
    "timestamp", "lat", "lon", "sog", "heading", "fuel_rate",
    "wind_speed", "wind_dir", "wave_height", "wave_dir", "current_speed", "current_dir",
)
ANGULAR_FIELDS = ("heading", "wind_dir", "wave_dir", "current_dir")


@dataclass(frozen=True)
class VoyageTotals:
    fuel_total: float  # liters
    time_total: float  # hours
    distance_total: float  # km

    def __post_init__(self):
        if min(self.fuel_total, self.time_total, self.distance_total) < 0:
            raise ValueError("voyage totals must be non-negative")


@dataclass(frozen=True)
class Voyage:
    """Ordered records of one port-to-port crossing."""

    id: str
    direction: Direction
    records: tuple
    totals: Optional[VoyageTotals] = None
    eff_score: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if len(self.records) < 2:
            raise VoyageError(f"voyage {self.id}: needs at least 2 records")
        prev = -math.inf
        for i, r in enumerate(self.records):
            if r.timestamp <= prev:
                raise VoyageError(f"voyage {self.id}: timestamps not increasing at record {i}")
            if r.voyage_id != self.id:
                raise VoyageError(f"voyage {self.id}: record {i} carries voyage_id {r.voyage_id!r}")
            prev = r.timestamp

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        """Read-only float array of one numeric record field."""
        return self._columns[name]

    @cached_property
    def _columns(self) -> dict:
        cols = {}
        for name in NUMERIC_FIELDS:
            arr = np.array([getattr(r, name) for r in self.records], dtype=float)
            arr.flags.writeable = False
            cols[name] = arr
        return cols

    @cached_property
    def positions(self) -> np.ndarray:
        arr = along_track_fraction(self)
        arr.flags.writeable = False
        return arr

    @cached_property
    def leg_distances(self) -> np.ndarray:
        """Great-circle length (m) of each leg between consecutive records."""
        lat, lon = self.column("lat"), self.column("lon")
        arr = haversine_array(lat[:-1], lon[:-1], lat[1:], lon[1:])
        arr.flags.writeable = False
        return arr

    def speed_modes(self) -> list:
        return [r.speed_mode for r in self.records]


@dataclass(frozen=True)
class Geofence:
    lat: float
    lon: float
    radius: float  # meters

    def contains(self, lat: float, lon: float) -> bool:
        return haversine_distance((self.lat, self.lon), (lat, lon)) <= self.radius


@dataclass(frozen=True)
class RouteConfig:
    """Fixed-route geometry and operating thresholds.

    ``port_a`` is the southern port; voyages leaving it are Northbound.
    ``segment_bounds`` holds two latitudes (south/middle, middle/north).
    Records in the middle band east of ``direct_lon_min`` are on the Direct
    segment; ``None`` disables that rule.
    """

    port_a: Geofence
    port_b: Geofence
    segment_bounds: tuple = (57.665, 57.715)
    direct_lon_min: Optional[float] = 11.945
    cruising_sog_threshold: float = 3.0
    min_port_dwell: float = 1200.0

    def __post_init__(self):
        object.__setattr__(self, "segment_bounds", tuple(float(b) for b in self.segment_bounds))
        bounds = self.segment_bounds
        if len(bounds) != 2 or not bounds[0] < bounds[1]:
            raise ValueError("segment_bounds must be two strictly increasing latitudes")
        if self.cruising_sog_threshold <= 0:
            raise ValueError("cruising_sog_threshold must be positive")
        gap = haversine_distance((self.port_a.lat, self.port_a.lon), (self.port_b.lat, self.port_b.lon))
        if gap <= self.port_a.radius + self.port_b.radius:
            raise ValueError("port geofences overlap")

    def to_dict(self) -> dict:
        return {
            "port_a": vars(self.port_a).copy(),
            "port_b": vars(self.port_b).copy(),
            "segment_bounds": list(self.segment_bounds),
            "direct_lon_min": self.direct_lon_min,
            "cruising_sog_threshold": self.cruising_sog_threshold,
            "min_port_dwell": self.min_port_dwell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteConfig":
        d = dict(d)
        d["port_a"] = Geofence(**d["port_a"])
        d["port_b"] = Geofence(**d["port_b"])
        return cls(**d)


class Provenance(str, enum.Enum):
    MEASURED = "Measured"
    PREDICTED = "Predicted"


@dataclass(frozen=True)
class SpeedProfile:
    """SOG sequence aligned to along-track positions of one voyage."""

    voyage_id: str
    positions: np.ndarray
    sog: np.ndarray
    provenance: Provenance = Provenance.MEASURED
    model: Optional[str] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        sog = np.asarray(self.sog, dtype=float)
        if pos.shape != sog.shape or pos.ndim != 1:
            raise ValueError("positions and sog must be 1-D arrays of equal length")
        if pos.size > 1 and np.any(np.diff(pos) < 0):
            raise ValueError("positions must be non-decreasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "sog", sog)

    def check_clip(self, sog_min: float, sog_max: float) -> None:
        if self.provenance is Provenance.PREDICTED and (
            np.any(self.sog < sog_min) or np.any(self.sog > sog_max)
        ):
            raise ValueError(f"predicted profile for {self.voyage_id} leaves [{sog_min}, {sog_max}]")

    @classmethod
    def measured(cls, voyage: Voyage) -> "SpeedProfile":
        return cls(voyage.id, voyage.positions, voyage.column("sog").copy())


def haversine_distance(p: Sequence[float], q: Sequence[float]) -> float:
    """Great-circle distance in meters between two (lat, lon) pairs in degrees."""
    lat1, lon1 = math.radians(p[0]), math.radians(p[1])
    lat2, lon2 = math.radians(q[0]), math.radians(q[1])
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised :func:`haversine_distance`."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=float)) for a in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def along_track_fraction(voyage: Voyage) -> np.ndarray:
    """Cumulative distance along the voyage normalised to [0, 1]."""
    lat = np.array([r.lat for r in voyage.records])
    lon = np.array([r.lon for r in voyage.records])
    legs = haversine_array(lat[:-1], lon[:-1], lat[1:], lon[1:])
    total = legs.sum()
    if not total > 0:
        raise VoyageError(f"voyage {voyage.id}: zero total distance")
    cum = np.concatenate([[0.0], np.cumsum(legs)]) / total
    cum[-1] = 1.0
    return cum
