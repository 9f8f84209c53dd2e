"""Seeded synthetic route, hindcast weather and voyage corpus.

The generator writes the same files the real pipeline consumes: a raw record
CSV (weather columns left blank), per-variable grid CSVs with a manifest, and a
ground-truth sidecar for tests. Randomness comes from PCG64 sub-streams keyed
by purpose and voyage index, so adding voyages never changes earlier ones.
"""

from __future__ import annotations

import bisect
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .core import Geofence, Record, RouteConfig, RouteSegment, haversine_distance
from .efficiency import FuelModelCoeffs, fuel_rate_model, relative_wind_angle
from .ingest import write_records_csv
from .util import atomic_write_text, rng_stream
from .weather import (
    GRID_VARIABLES,
    Grid3D,
    WeatherThresholds,
    label_weather_state,
    speed_dir_to_uv,
    trilinear_interpolate,
    uv_to_speed_dir,
    write_grids,
)

STREAM_WEATHER = 0
STREAM_VOYAGE = 1

SOUTH_PORT = (57.600, 11.900)
NORTH_PORT = (57.780, 11.900)
# Middle-band legs sit between the segment breakpoints 57.665 / 57.715.
CANAL_PATH = (SOUTH_PORT, (57.640, 11.915), (57.665, 11.930), (57.715, 11.930), (57.745, 11.912), NORTH_PORT)
DIRECT_PATH = (SOUTH_PORT, (57.640, 11.925), (57.665, 11.960), (57.715, 11.960), (57.745, 11.915), NORTH_PORT)


@dataclass(frozen=True)
class SynthConfig:
    n_voyages: int = 200
    seed: int = 42
    start_time: float = 1_700_000_000.0
    sample_interval: float = 15.0  # seconds between raw records
    port_radius: float = 600.0
    dwell_range: Tuple[float, float] = (1500.0, 2700.0)
    p_direct: float = 0.15
    # weather
    wave_mean: float = 0.85
    storm_amplitude: float = 0.45
    temporal_corr_hours: float = 10.0
    spatial_corr_km: float = 60.0
    wind_mean: float = 7.0
    wind_per_wave: float = 5.0
    current_mean: float = 0.15
    # captain policy
    cruise_sog: float = 4.6
    maneuver_sog: float = 1.8
    port_sog: float = 1.4
    voyage_sog_sigma: float = 0.12
    speed_noise: float = 0.05
    rough_wave: float = 1.25
    wave_slowdown: float = 0.1  # m/s per meter of wave height, careful captains
    p_ineff: float = 0.3
    overspeed: float = 1.1
    # fuel
    fuel_noise: float = 0.03
    true_coeffs: Tuple[float, float, float, float] = (160.0, 0.6, 25.0, 0.04)  # hotel load puts the fuel-optimal speed near 5.1 m/s
    mismatch_c4: float = 0.0  # L/h per (m/s)^4, outside the fitted family

    def __post_init__(self):
        if self.n_voyages < 2:
            raise ValueError("n_voyages must be >= 2")
        if min(self.speed_noise, self.fuel_noise, self.voyage_sog_sigma, self.storm_amplitude) < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0 <= self.p_ineff <= 1 or not 0 <= self.p_direct <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "dwell_range", tuple(self.dwell_range))
        object.__setattr__(self, "true_coeffs", tuple(self.true_coeffs))

    @property
    def coeffs(self) -> FuelModelCoeffs:
        return FuelModelCoeffs(*self.true_coeffs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dwell_range"] = list(self.dwell_range)
        d["true_coeffs"] = list(self.true_coeffs)
        return d


def default_route(cfg: SynthConfig = SynthConfig(), cruising_sog_threshold: float = 3.0) -> RouteConfig:
    return RouteConfig(
        port_a=Geofence(*SOUTH_PORT, cfg.port_radius),
        port_b=Geofence(*NORTH_PORT, cfg.port_radius),
        segment_bounds=(CANAL_PATH[2][0], CANAL_PATH[3][0]),
        direct_lon_min=11.945,
        cruising_sog_threshold=cruising_sog_threshold,
        min_port_dwell=1200.0,
    )


# -- weather ------------------------------------------------------------------

GRID_LATS = np.array([57.5, 57.75, 58.0])
GRID_LONS = np.array([11.75, 12.0, 12.25])


def _ou_series(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    x = np.empty(n)
    x[0] = rng.standard_normal()
    shocks = rng.standard_normal(n - 1)
    scale = math.sqrt(1 - rho * rho)
    for k in range(1, n):
        x[k] = rho * x[k - 1] + scale * shocks[k - 1]
    return x


def generate_weather_fields(cfg: SynthConfig, t_start: float, t_end: float) -> Dict[str, Grid3D]:
    """Hourly, 0.25-degree grids of wave height, wind and current components.

    Each field is its mean plus ``storm_amplitude`` times a unit-scale anomaly:
    a few slow travelling sinusoids and an Ornstein-Uhlenbeck term whose
    correlation time is ``temporal_corr_hours``. Wave height is clamped at 0.
    """
    rng = rng_stream(cfg.seed, STREAM_WEATHER)
    t0 = math.floor(t_start / 3600.0) * 3600.0 - 3600.0
    n_t = int(math.ceil((t_end - t0) / 3600.0)) + 2
    times = t0 + 3600.0 * np.arange(n_t)
    hours = (times - times[0]) / 3600.0

    periods = rng.uniform(36.0, 144.0, 4)  # hours
    phases = rng.uniform(0, 2 * np.pi, 4)
    weights = rng.uniform(0.5, 1.0, 4)
    k_lat = rng.normal(0, 1, 4) / cfg.spatial_corr_km * 111.0
    k_lon = rng.normal(0, 1, 4) / cfg.spatial_corr_km * 60.0
    wind_phase = rng.uniform(0, 2 * np.pi)
    rho = math.exp(-1.0 / cfg.temporal_corr_hours)
    # own sub-streams: a longer schedule extends these series without shifting any draw
    ou_wave = _ou_series(rng_stream(cfg.seed, STREAM_WEATHER, 1), n_t, rho)
    ou_wind = _ou_series(rng_stream(cfg.seed, STREAM_WEATHER, 2), n_t, rho)

    T, LA, LO = np.meshgrid(hours, GRID_LATS - GRID_LATS[0], GRID_LONS - GRID_LONS[0], indexing="ij")
    sines = sum(w * np.sin(2 * np.pi * T / P + ph + kl * LA + ko * LO)
                for w, P, ph, kl, ko in zip(weights, periods, phases, k_lat, k_lon))
    sines = sines / math.sqrt(np.sum(weights ** 2) / 2)
    anomaly = 0.6 * sines + 0.8 * ou_wave[:, None, None]
    amp = cfg.storm_amplitude
    wave = np.maximum(0.0, cfg.wave_mean + amp * anomaly)

    wind_speed = np.maximum(0.0, cfg.wind_mean + amp * cfg.wind_per_wave * (anomaly + 0.3 * ou_wind[:, None, None]))
    wind_dir = np.mod(210.0 + amp * 90.0 * np.sin(2 * np.pi * T / 97.0 + wind_phase), 360.0)
    wind_u, wind_v = speed_dir_to_uv(wind_speed, wind_dir, meteorological=True)
    cur_speed = cfg.current_mean * (1.0 + 0.5 * amp * np.sin(2 * np.pi * T / 60.0))
    cur_u, cur_v = speed_dir_to_uv(cur_speed, np.full_like(cur_speed, 20.0), meteorological=False)

    fields = {"wave_height": wave, "wind_u": wind_u, "wind_v": wind_v, "current_u": cur_u, "current_v": cur_v}
    return {name: Grid3D(times, GRID_LATS, GRID_LONS, fields[name]) for name in GRID_VARIABLES}


# -- tracks -------------------------------------------------------------------

def _bearing(p, q) -> float:
    lat1, lat2 = math.radians(p[0]), math.radians(q[0])
    dlon = math.radians(q[1] - p[1])
    x = math.sin(dlon) * math.cos(lat2)
    y = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    b = math.degrees(math.atan2(x, y)) % 360.0
    return 0.0 if b >= 360.0 else b


@dataclass
class Polyline:
    points: tuple
    labels: tuple  # segment per leg

    def __post_init__(self):
        self.legs = np.array([haversine_distance(p, q) for p, q in zip(self.points[:-1], self.points[1:])])
        self.cum = np.concatenate([[0.0], np.cumsum(self.legs)])
        self.headings = [_bearing(p, q) for p, q in zip(self.points[:-1], self.points[1:])]

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def leg_at(self, s: float) -> int:
        return int(min(np.searchsorted(self.cum, s, side="right") - 1, len(self.legs) - 1))

    def locate(self, s: float):
        k = self.leg_at(s)
        w = min(max((s - self.cum[k]) / self.legs[k], 0.0), 1.0)
        p, q = self.points[k], self.points[k + 1]
        return p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1]), self.headings[k], self.labels[k]


def route_polyline(direct: bool, northbound: bool) -> Polyline:
    pts = DIRECT_PATH if direct else CANAL_PATH
    mid = RouteSegment.DIRECT if direct else RouteSegment.MIDDLE
    labels = (RouteSegment.SOUTH, RouteSegment.SOUTH, mid, RouteSegment.NORTH, RouteSegment.NORTH)
    if not northbound:
        pts, labels = pts[::-1], labels[::-1]
    return Polyline(tuple(pts), tuple(labels))


class _WaveProbe:
    """Scalar trilinear lookup of one grid in plain Python, for per-step use."""

    def __init__(self, g: Grid3D):
        self.axes = [g.times.tolist(), g.lats.tolist(), g.lons.tolist()]
        self.values = g.values.tolist()
        self.g = g

    def _cell(self, axis, x):
        k = min(max(bisect.bisect_right(axis, x) - 1, 0), len(axis) - 2)
        return k, (x - axis[k]) / (axis[k + 1] - axis[k])

    def __call__(self, t, lat, lon) -> float:
        if not (self.axes[0][0] <= t <= self.axes[0][-1]):
            return trilinear_interpolate(self.g, t, lat, lon)  # raises out-of-domain
        (i, wt), (j, wy), (k, wx) = self._cell(self.axes[0], t), self._cell(self.axes[1], lat), self._cell(self.axes[2], lon)
        v = self.values
        out = 0.0
        for di, a in ((0, 1 - wt), (1, wt)):
            for dj, b in ((0, 1 - wy), (1, wy)):
                row = v[i + di][j + dj]
                out += a * b * (row[k] * (1 - wx) + row[k + 1] * wx)
        return out


def _target_sog(s: float, line: Polyline, cruise: float, cfg: SynthConfig) -> float:
    # port approach/departure: slow inside ~700 m, ramp to cruise over the next 600 m
    d_port = min(s, line.length - s)
    speed = cruise
    if d_port < 1300.0:
        w = max(0.0, (d_port - 700.0) / 600.0)
        speed = cfg.port_sog + w * (cruise - cfg.port_sog)
    k = line.leg_at(s)
    if line.labels[k] is RouteSegment.MIDDLE:
        speed = min(speed, cfg.maneuver_sog)
    else:
        # ramp down into / up out of the canal over 400 m
        for edge in (line.cum[2], line.cum[3]):
            if line.labels[2] is RouteSegment.MIDDLE and abs(s - edge) < 400.0:
                w = abs(s - edge) / 400.0
                speed = min(speed, cfg.maneuver_sog + w * (cruise - cfg.maneuver_sog))
    return speed


@dataclass
class VoyageTrack:
    index: int
    northbound: bool
    direct: bool
    inefficient: bool
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    sog: np.ndarray
    heading: np.ndarray
    segments: list
    in_port: np.ndarray
    overspeed_steps: int = 0
    wave: Optional[np.ndarray] = None


def simulate_voyage(cfg: SynthConfig, index: int, t_depart: float, probe: _WaveProbe) -> VoyageTrack:
    """Sail one crossing from port centre to port centre at raw sample spacing."""
    rng = rng_stream(cfg.seed, STREAM_VOYAGE, index)
    northbound = index % 2 == 0
    direct = bool(rng.random() < cfg.p_direct)
    inefficient = bool(rng.random() < cfg.p_ineff)
    cruise_base = cfg.cruise_sog + cfg.voyage_sog_sigma * rng.standard_normal()
    line = route_polyline(direct, northbound)
    dt = cfg.sample_interval
    radius = cfg.port_radius

    ts, lats, lons, sogs, heads, segs, ports = [], [], [], [], [], [], []
    s, t, noise, over = 0.0, t_depart, 0.0, 0
    while True:
        lat, lon, hd, seg = line.locate(s)
        wave = probe(t, lat, lon)
        if inefficient and wave >= cfg.rough_wave:
            cruise = cruise_base + cfg.overspeed
            over += 1
        else:
            cruise = cruise_base - cfg.wave_slowdown * wave
        noise = 0.8 * noise + cfg.speed_noise * rng.standard_normal()
        sog = max(0.3, _target_sog(s, line, cruise, cfg) + noise)
        ts.append(t)
        lats.append(lat)
        lons.append(lon)
        sogs.append(sog)
        heads.append(hd)
        segs.append(seg)
        ports.append(min(s, line.length - s) <= radius)
        if s >= line.length:
            break
        s = min(line.length, s + sog * dt)
        t += dt
    return VoyageTrack(index, northbound, direct, inefficient, np.array(ts), np.array(lats), np.array(lons),
                       np.array(sogs), np.array(heads), segs, np.array(ports), over)


def _true_rates(cfg: SynthConfig, grids, t, lat, lon, sog, heading):
    wave = np.maximum(trilinear_interpolate(grids["wave_height"], t, lat, lon), 0.0)
    wu = trilinear_interpolate(grids["wind_u"], t, lat, lon)
    wv = trilinear_interpolate(grids["wind_v"], t, lat, lon)
    wspd, wdir = uv_to_speed_dir(wu, wv, meteorological=True)
    rate = fuel_rate_model(sog, wave, wspd, relative_wind_angle(wdir, heading), cfg.coeffs)
    rate = np.atleast_1d(rate) + cfg.mismatch_c4 * np.asarray(sog) ** 4
    return rate, wave


@dataclass
class Corpus:
    records: list  # raw Records, time-ordered, weather blank
    grids: Dict[str, Grid3D]
    truth: dict
    tracks: list


def _schedule_span(cfg: SynthConfig) -> Tuple[float, float]:
    # upper bound: slowest crossing ~1.5 h at port/canal speeds plus maximum dwell
    per_voyage = 3.0 * 3600.0 + cfg.dwell_range[1]
    return cfg.start_time, cfg.start_time + cfg.dwell_range[1] + cfg.n_voyages * per_voyage


def generate_voyages(cfg: SynthConfig, grids: Optional[Dict[str, Grid3D]] = None) -> Corpus:
    """Continuous track of ``n_voyages`` alternating crossings with port dwells.

    Fuel rate is the true surrogate (plus optional quartic mismatch) times
    ``1 + fuel_noise * N(0, 1)``. Ground truth per voyage: direction, path,
    departure/arrival times (first sample outside the origin fence, first
    sample inside the destination fence), overspeed flag, modal true weather
    state and the run-length encoded scripted segments.
    """
    if grids is None:
        grids = generate_weather_fields(cfg, *_schedule_span(cfg))
    probe = _WaveProbe(grids["wave_height"])
    th = WeatherThresholds(rough_min_wave=cfg.rough_wave)
    records: List[Record] = []
    truth = {"config": cfg.to_dict(), "voyages": []}
    tracks = []
    t = cfg.start_time

    def dwell(port, t0, duration, heading, rng):
        n = int(duration // cfg.sample_interval)
        tt = t0 + cfg.sample_interval * np.arange(n)
        jitter = rng.normal(0, 1e-4, (n, 2))
        lat = port[0] + jitter[:, 0]
        lon = port[1] + jitter[:, 1]
        sog = np.abs(rng.normal(0, 0.05, n))
        return tt, lat, lon, sog, np.full(n, heading)

    for i in range(cfg.n_voyages):
        rng = rng_stream(cfg.seed, STREAM_VOYAGE, i, 1)
        northbound = i % 2 == 0
        origin = SOUTH_PORT if northbound else NORTH_PORT
        prev_heading = 0.0 if northbound else 180.0
        d = dwell(origin, t, rng.uniform(*cfg.dwell_range), prev_heading, rng)
        t = d[0][-1] + cfg.sample_interval
        track = simulate_voyage(cfg, i, t, probe)
        rate_d, _ = _true_rates(cfg, grids, *d)
        rate_v, wave_v = _true_rates(cfg, grids, track.t, track.lat, track.lon, track.sog, track.heading)
        track.wave = wave_v
        rates = np.concatenate([rate_d, rate_v])
        rates = np.maximum(0.0, rates * (1.0 + cfg.fuel_noise * rng.standard_normal(rates.size)))
        tt = np.concatenate([d[0], track.t])
        la = np.concatenate([d[1], track.lat])
        lo = np.concatenate([d[2], track.lon])
        sg = np.concatenate([d[3], track.sog])
        hd = np.concatenate([d[4], track.heading])
        for k in range(tt.size):
            records.append(Record(float(tt[k]), float(la[k]), float(lo[k]), float(sg[k]), float(hd[k]),
                                  float(rates[k])))

        outside = np.flatnonzero(~track.in_port)
        voyage_rates = rates[d[0].size:]
        states = [label_weather_state(w, th).value for w in wave_v[~track.in_port]]
        runs = []
        for seg in np.array([g.value for g in track.segments])[~track.in_port]:
            if runs and runs[-1][0] == seg:
                runs[-1][1] += 1
            else:
                runs.append([seg, 1])
        truth["voyages"].append({
            "index": i,
            "direction": "Northbound" if northbound else "Southbound",
            "path": "direct" if track.direct else "canal",
            "inefficient_captain": track.inefficient,
            "overspeed": bool(track.overspeed_steps > 0),
            "depart": float(track.t[outside[0]]),
            "arrive_last_outside": float(track.t[outside[-1]]),
            "weather_state": max(sorted(set(states)), key=states.count) if states else None,
            "raw_fuel_outside": float(np.sum((voyage_rates[outside][:-1] + voyage_rates[outside][1:]) / 2
                                             * np.diff(track.t[outside])) / 3600.0),
            "segments": runs,
        })
        tracks.append(track)
        t = track.t[-1] + cfg.sample_interval

    # final dwell so the last arrival is followed by in-port samples
    rng = rng_stream(cfg.seed, STREAM_VOYAGE, cfg.n_voyages, 1)
    dest = NORTH_PORT if cfg.n_voyages % 2 == 1 else SOUTH_PORT
    d = dwell(dest, t, cfg.dwell_range[0], 0.0, rng)
    rate_d, _ = _true_rates(cfg, grids, *d)
    for k in range(d[0].size):
        records.append(Record(float(d[0][k]), float(d[1][k]), float(d[2][k]), float(d[3][k]), float(d[4][k]),
                              float(max(0.0, rate_d[k]))))
    return Corpus(records, grids, truth, tracks)


def write_corpus(corpus: Corpus, outdir: Union[str, Path]) -> Path:
    """Write ``raw/records.csv``, ``grids/``, ``truth.json`` and ``manifest.json``."""
    outdir = Path(outdir)
    buf = io.StringIO()
    write_records_csv(corpus.records, buf)
    atomic_write_text(outdir / "raw" / "records.csv", buf.getvalue())
    write_grids(corpus.grids, outdir / "grids")
    atomic_write_text(outdir / "truth.json", json.dumps(corpus.truth, indent=1) + "\n")
    manifest = {
        "records": ["raw/records.csv"],
        "grids_manifest": "grids/manifest.json",
        "truth": "truth.json",
        "route": default_route(SynthConfig(**{**corpus.truth["config"]})).to_dict(),
        "n_voyages": len(corpus.truth["voyages"]),
    }
    path = outdir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")
    return path


def synth_config_from_dict(d: dict) -> SynthConfig:
    return SynthConfig(**d)
