"""Hindcast grids, trilinear interpolation and threshold weather states."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .core import Voyage, WeatherState

GRID_VARIABLES = ("wave_height", "wind_u", "wind_v", "current_u", "current_v")


class OutOfDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Grid3D:
    """One variable on a regular-or-not (time, lat, lon) grid."""

    times: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        axes = []
        for name in ("times", "lats", "lons"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise ValueError(f"grid axis {name} must be strictly increasing with >= 2 points")
            a.flags.writeable = False
            object.__setattr__(self, name, a)
            axes.append(a.size)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != tuple(axes):
            raise ValueError(f"grid values shape {vals.shape} does not match axes {tuple(axes)}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid contains non-finite values")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def contains(self, t, lat, lon) -> np.ndarray:
        return ((self.times[0] <= t) & (t <= self.times[-1])
                & (self.lats[0] <= lat) & (lat <= self.lats[-1])
                & (self.lons[0] <= lon) & (lon <= self.lons[-1]))


def _locate(axis: np.ndarray, x: np.ndarray):
    i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, axis.size - 2)
    w = (x - axis[i]) / (axis[i + 1] - axis[i])
    return i, w


def trilinear_interpolate(g: Grid3D, t, lat, lon):
    """Blend the 8 corner values enclosing each (t, lat, lon) query.

    Accepts scalars or equal-shaped arrays. Queries outside the grid's bounding
    box raise :class:`OutOfDomainError`; there is no extrapolation.
    """
    scalar = np.ndim(t) == 0 and np.ndim(lat) == 0 and np.ndim(lon) == 0
    t, lat, lon = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (t, lat, lon))
    inside = g.contains(t, lat, lon)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise OutOfDomainError(
            f"query {bad} at (t={t.flat[bad]}, lat={lat.flat[bad]}, lon={lon.flat[bad]}) is outside the grid")
    i, wt = _locate(g.times, t)
    j, wy = _locate(g.lats, lat)
    k, wx = _locate(g.lons, lon)
    v = g.values
    c00 = v[i, j, k] * (1 - wx) + v[i, j, k + 1] * wx
    c01 = v[i, j + 1, k] * (1 - wx) + v[i, j + 1, k + 1] * wx
    c10 = v[i + 1, j, k] * (1 - wx) + v[i + 1, j, k + 1] * wx
    c11 = v[i + 1, j + 1, k] * (1 - wx) + v[i + 1, j + 1, k + 1] * wx
    c0 = c00 * (1 - wy) + c01 * wy
    c1 = c10 * (1 - wy) + c11 * wy
    out = c0 * (1 - wt) + c1 * wt
    return float(out[0]) if scalar else out


def uv_to_speed_dir(u, v, meteorological: bool):
    """Vector magnitude and compass direction in degrees.

    Meteorological convention gives the direction the flow comes *from*
    (wind); oceanographic gives the direction it flows *toward* (current).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    speed = np.hypot(u, v)
    if meteorological:
        deg = np.degrees(np.arctan2(-u, -v))
    else:
        deg = np.degrees(np.arctan2(u, v))
    deg = np.mod(deg, 360.0)
    deg = np.where(deg >= 360.0, 0.0, deg)
    return speed, deg


def speed_dir_to_uv(speed, direction, meteorological: bool):
    rad = np.radians(np.asarray(direction, dtype=float))
    sign = -1.0 if meteorological else 1.0
    return sign * speed * np.sin(rad), sign * speed * np.cos(rad)


def attach_weather(v: Voyage, grids: Mapping[str, Grid3D]) -> Voyage:
    """Overwrite every record's weather fields with values interpolated from ``grids``.

    ``grids`` must hold every name in ``GRID_VARIABLES``. Wave direction is set
    to the wind direction, since the grids carry no separate wave-direction field.
    """
    missing = [name for name in GRID_VARIABLES if name not in grids]
    if missing:
        raise KeyError(f"missing grid variables: {missing}")
    t, lat, lon = v.column("timestamp"), v.column("lat"), v.column("lon")
    for name in GRID_VARIABLES:
        inside = grids[name].contains(t, lat, lon)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise OutOfDomainError(f"voyage {v.id}: record {bad} outside the {name} grid")
    vals = {name: trilinear_interpolate(grids[name], t, lat, lon) for name in GRID_VARIABLES}
    wave = np.maximum(vals["wave_height"], 0.0)
    wind_speed, wind_dir = uv_to_speed_dir(vals["wind_u"], vals["wind_v"], meteorological=True)
    cur_speed, cur_dir = uv_to_speed_dir(vals["current_u"], vals["current_v"], meteorological=False)
    recs = [
        replace(r, wave_height=float(wave[n]), wave_dir=float(wind_dir[n]),
                wind_speed=float(wind_speed[n]), wind_dir=float(wind_dir[n]),
                current_speed=float(cur_speed[n]), current_dir=float(cur_dir[n]))
        for n, r in enumerate(v.records)
    ]
    return replace(v, records=recs)


@dataclass(frozen=True)
class WeatherThresholds:
    calm_max_wave: float = 0.5
    rough_min_wave: float = 1.25

    def __post_init__(self):
        if not 0 < self.calm_max_wave < self.rough_min_wave:
            raise ValueError("need 0 < calm_max_wave < rough_min_wave")


def label_weather_state(wave_height: float, th: WeatherThresholds = WeatherThresholds()) -> WeatherState:
    if wave_height < th.calm_max_wave:
        return WeatherState.CALM
    if wave_height >= th.rough_min_wave:
        return WeatherState.ROUGH
    return WeatherState.MODERATE


# -- grid files ---------------------------------------------------------------

def write_grid_csv(g: Grid3D, path: Union[str, Path]) -> None:
    from .util import atomic_write_text

    lines = ["time,lat,lon,value"]
    for a, t in enumerate(g.times.tolist()):
        for b, la in enumerate(g.lats.tolist()):
            for c, lo in enumerate(g.lons.tolist()):
                lines.append(f"{t!r},{la!r},{lo!r},{float(g.values[a, b, c])!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_grid_csv(path: Union[str, Path]) -> Grid3D:
    """Load a long-format (time, lat, lon, value) CSV and densify it."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(float(r["time"]), float(r["lat"]), float(r["lon"]), float(r["value"]))
                for r in csv.DictReader(fh)]
    if not rows:
        raise ValueError(f"{path}: empty grid file")
    arr = np.array(rows)
    axes = [np.unique(arr[:, i]) for i in range(3)]
    values = np.full(tuple(a.size for a in axes), math.nan)
    idx = [np.searchsorted(axes[i], arr[:, i]) for i in range(3)]
    values[idx[0], idx[1], idx[2]] = arr[:, 3]
    if np.isnan(values).any():
        raise ValueError(f"{path}: grid is not dense")
    return Grid3D(axes[0], axes[1], axes[2], values)


def write_grids(grids: Mapping[str, Grid3D], outdir: Union[str, Path]) -> Path:
    from .util import atomic_write_text

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name in sorted(grids):
        fname = f"{name}.csv"
        write_grid_csv(grids[name], outdir / fname)
        manifest[name] = fname
    path = outdir / "manifest.json"
    atomic_write_text(path, json.dumps({"variables": manifest}, indent=2) + "\n")
    return path


def read_grids(manifest_path: Union[str, Path]) -> dict:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    return {name: read_grid_csv(manifest_path.parent / fname)
            for name, fname in manifest["variables"].items()}
