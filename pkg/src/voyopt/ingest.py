"""Raw record parsing, 1-minute resampling, voyage tagging and corpus statistics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence, Union

import numpy as np

from .core import (
    ANGULAR_FIELDS,
    NUMERIC_FIELDS,
    Direction,
    Record,
    RouteConfig,
    RouteSegment,
    SpeedMode,
    Voyage,
    VoyageError,
)

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("timestamp", "lat", "lon", "sog", "heading", "fuel_rate")
OPTIONAL_FIELDS = ("wind_speed", "wind_dir", "wave_height", "wave_dir", "current_speed", "current_dir")
DEFAULT_SCHEMA = {name: name for name in REQUIRED_FIELDS + OPTIONAL_FIELDS}


class SchemaError(ValueError):
    pass


class IngestError(ValueError):
    pass


@dataclass
class ParseResult:
    records: list
    dropped: int = 0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def parse_records(source, schema: Optional[dict] = None) -> ParseResult:
    """Parse a CSV of raw observations into :class:`Record` objects.

    ``schema`` maps Record field names to CSV column names. Rows whose required
    fields are missing, non-numeric or out of range are dropped and counted;
    blank optional weather cells become NaN.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty record file") from None
        index = {name.strip(): i for i, name in enumerate(header)}
        missing = [f for f in REQUIRED_FIELDS if schema.get(f) not in index]
        if missing:
            raise SchemaError(f"required columns missing: {', '.join(missing)}")
        required = [(f, index[schema[f]]) for f in REQUIRED_FIELDS]
        optional = [(f, index[schema[f]]) for f in OPTIONAL_FIELDS if schema.get(f) in index]

        records, dropped = [], 0
        for row in reader:
            if not row:
                continue
            try:
                values = {f: float(row[i]) for f, i in required}
                if not all(math.isfinite(v) for v in values.values()):
                    raise ValueError("non-finite required field")
                for f, i in optional:
                    cell = row[i].strip() if i < len(row) else ""
                    values[f] = float(cell) if cell else math.nan
                records.append(Record(**values))
            except (ValueError, IndexError):
                dropped += 1
    finally:
        if fh is not source:
            fh.close()
    if dropped:
        logger.info("dropped %d unparseable rows", dropped)
    return ParseResult(records, dropped)


def _circular_mean(deg: np.ndarray) -> float:
    deg = deg[~np.isnan(deg)]
    if deg.size == 0:
        return math.nan
    if deg.size == 1:
        return float(deg[0])
    rad = np.radians(deg)
    mean = math.degrees(math.atan2(np.sin(rad).sum(), np.cos(rad).sum())) % 360.0
    return 0.0 if mean >= 360.0 else mean


def _window_mean(values: np.ndarray) -> float:
    if values.size == 1:
        return float(values[0])
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if finite.size else math.nan


def resample_1min(records: Sequence[Record], period: float = 60.0) -> list:
    """Average time-ordered records into one record per non-empty window.

    Windows are aligned to multiples of ``period`` seconds and each output is
    stamped with its window start. Angular fields use the circular mean.
    """
    if not records:
        return []
    ts = np.array([r.timestamp for r in records])
    if np.any(np.diff(ts) < 0):
        raise IngestError("records are not time-ordered")
    cols = {name: np.array([getattr(r, name) for r in records], dtype=float) for name in NUMERIC_FIELDS}
    windows = np.floor(ts / period)
    starts = np.flatnonzero(np.concatenate([[True], windows[1:] != windows[:-1]]))
    ends = np.append(starts[1:], len(records))

    out = []
    for lo, hi in zip(starts, ends):
        values = {}
        for name in NUMERIC_FIELDS:
            if name == "timestamp":
                continue
            chunk = cols[name][lo:hi]
            values[name] = _circular_mean(chunk) if name in ANGULAR_FIELDS else _window_mean(chunk)
        first = records[lo]
        out.append(Record(
            timestamp=float(windows[lo] * period), **values,
            voyage_id=first.voyage_id, segment=first.segment, speed_mode=first.speed_mode,
        ))
    return out


def classify_segment(r: Record, route: RouteConfig) -> RouteSegment:
    south_max, north_min = route.segment_bounds
    if r.lat < south_max:
        return RouteSegment.SOUTH
    if r.lat >= north_min:
        return RouteSegment.NORTH
    if route.direct_lon_min is not None and r.lon >= route.direct_lon_min:
        return RouteSegment.DIRECT
    return RouteSegment.MIDDLE


def classify_speed_mode(r: Record, route: RouteConfig) -> SpeedMode:
    if r.sog >= route.cruising_sog_threshold:
        return SpeedMode.CRUISING
    return SpeedMode.MANEUVERING


def default_cruising_threshold(sogs: Iterable[float], bin_width: float = 0.1) -> float:
    """Midpoint between the two dominant modes of the SOG histogram.

    The histogram is lightly smoothed; the two highest local maxima are taken
    as the maneuvering and cruising modes.
    """
    sogs = np.asarray(list(sogs), dtype=float)
    if sogs.size < 2 or np.ptp(sogs) <= 0:
        raise IngestError("need a spread of SOG values to locate two modes")
    edges = np.arange(sogs.min(), sogs.max() + 2 * bin_width, bin_width)
    counts, edges = np.histogram(sogs, bins=edges)
    smooth = np.convolve(counts, np.ones(5) / 5, mode="same")
    padded = np.concatenate([[-1.0], smooth, [-1.0]])
    peaks = [i for i in range(len(smooth))
             if padded[i + 1] > padded[i] and padded[i + 1] >= padded[i + 2]]
    if len(peaks) < 2:
        raise IngestError("SOG histogram is not bimodal")
    top = sorted(sorted(peaks, key=lambda i: -smooth[i])[:2])
    centers = (edges[:-1] + edges[1:]) / 2
    return float((centers[top[0]] + centers[top[1]]) / 2)


def _port_of(r: Record, route: RouteConfig) -> Optional[str]:
    if route.port_a.contains(r.lat, r.lon):
        return "A"
    if route.port_b.contains(r.lat, r.lon):
        return "B"
    return None


def tag_voyages(records: Sequence[Record], route: RouteConfig, id_prefix: str = "V") -> list:
    """Split a continuous track into port-to-port voyages.

    A voyage opens when the vessel leaves a port geofence after dwelling there
    for at least ``route.min_port_dwell`` seconds and closes when it enters the
    opposite geofence. Records inside geofences, and those of aborted departures,
    belong to no voyage. Returned records carry voyage id, segment and speed mode.
    """
    voyages = []
    port, entered, last_inside = None, None, None
    origin, pending = None, []

    for r in records:
        where = _port_of(r, route)
        if where is not None:
            if pending and where != origin:
                voyages.append(_close_voyage(pending, origin, route, f"{id_prefix}{len(voyages):04d}"))
            pending, origin = [], None
            if where != port:
                port, entered = where, r.timestamp
            last_inside = r.timestamp
            continue
        if port is not None and origin is None and not pending:
            if last_inside - entered >= route.min_port_dwell:
                origin = port
            port = None
        if origin is not None:
            pending.append(r)
    return [v for v in voyages if v is not None]


def _close_voyage(pending, origin, route, vid) -> Optional[Voyage]:
    if len(pending) < 2:
        return None
    direction = Direction.NORTHBOUND if origin == "A" else Direction.SOUTHBOUND
    recs = [replace(r, voyage_id=vid, segment=classify_segment(r, route),
                    speed_mode=classify_speed_mode(r, route)) for r in pending]
    try:
        return Voyage(vid, direction, recs)
    except VoyageError as exc:
        logger.warning("discarding voyage candidate: %s", exc)
        return None


def relabel(voyage: Voyage, route: RouteConfig) -> Voyage:
    """Recompute segment and speed mode of every record (e.g. for a new threshold)."""
    recs = [replace(r, segment=classify_segment(r, route), speed_mode=classify_speed_mode(r, route))
            for r in voyage.records]
    return replace(voyage, records=recs)


@dataclass(frozen=True)
class StatsRow:
    variable: str
    all: float
    cruising: float

    @property
    def difference_pct(self) -> float:
        if self.all == 0:
            return 0.0
        return (self.all - self.cruising) / self.all * 100.0


@dataclass(frozen=True)
class StatsTable:
    fuel: StatsRow
    time: StatsRow
    distance: StatsRow
    speed: StatsRow

    @property
    def rows(self):
        return (self.fuel, self.time, self.distance, self.speed)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "all", "cruising", "difference_pct"])
        for row in self.rows:
            w.writerow([row.variable, f"{row.all:.6g}", f"{row.cruising:.6g}", f"{row.difference_pct:.2f}"])
        return buf.getvalue()


def dataset_stats(voyages: Sequence[Voyage], route: Optional[RouteConfig] = None) -> StatsTable:
    """Fuel/time/distance totals and mean speed, over all records and Cruising only.

    Each leg between consecutive records is attributed to the speed mode of
    its starting record. Speed is the mean of record SOG values.
    """
    if not voyages:
        raise IngestError("empty corpus")
    fuel = np.zeros(2)
    time = np.zeros(2)
    dist = np.zeros(2)
    sog_all, sog_cruise = [], []
    for v in voyages:
        modes = [r.speed_mode if route is None else classify_speed_mode(r, route) for r in v.records]
        cruising = np.array([m is SpeedMode.CRUISING for m in modes])
        ts, rate, sog = v.column("timestamp"), v.column("fuel_rate"), v.column("sog")
        dt = np.diff(ts)
        leg_fuel = (rate[:-1] + rate[1:]) / 2 * dt / 3600.0
        mask = cruising[:-1]
        fuel += [leg_fuel.sum(), leg_fuel[mask].sum()]
        time += [dt.sum() / 3600.0, dt[mask].sum() / 3600.0]
        dist += [v.leg_distances.sum() / 1000.0, v.leg_distances[mask].sum() / 1000.0]
        sog_all.append(sog)
        sog_cruise.append(sog[cruising])
    sog_all = np.concatenate(sog_all)
    sog_cruise = np.concatenate(sog_cruise)
    return StatsTable(
        fuel=StatsRow("fuel_total_l", fuel[0], fuel[1]),
        time=StatsRow("time_total_h", time[0], time[1]),
        distance=StatsRow("distance_total_km", dist[0], dist[1]),
        speed=StatsRow("speed_avg_ms", float(sog_all.mean()),
                       float(sog_cruise.mean()) if sog_cruise.size else 0.0),
    )


# -- voyage files -------------------------------------------------------------

VOYAGE_COLUMNS = NUMERIC_FIELDS + ("voyage_id", "segment", "speed_mode")


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_voyages(voyages: Sequence[Voyage], outdir: Union[str, Path]) -> Path:
    """Write one CSV per voyage plus ``index.json``; returns the index path."""
    from .util import atomic_write_text

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    index = []
    for v in voyages:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(VOYAGE_COLUMNS)
        for r in v.records:
            w.writerow([_fmt(getattr(r, f)) for f in NUMERIC_FIELDS]
                       + [r.voyage_id, r.segment.value if r.segment else "",
                          r.speed_mode.value if r.speed_mode else ""])
        atomic_write_text(outdir / f"{v.id}.csv", buf.getvalue())
        index.append({
            "id": v.id, "direction": v.direction.value, "records": len(v),
            "start": v.records[0].timestamp, "end": v.records[-1].timestamp,
        })
    path = outdir / "index.json"
    atomic_write_text(path, json.dumps({"voyages": index}, indent=2) + "\n")
    return path


def read_voyages(indir: Union[str, Path]) -> list:
    indir = Path(indir)
    index = json.loads((indir / "index.json").read_text())
    voyages = []
    for entry in index["voyages"]:
        with open(indir / f"{entry['id']}.csv", newline="", encoding="utf-8") as fh:
            recs = []
            for row in csv.DictReader(fh):
                vals = {f: (float(row[f]) if row[f] != "" else math.nan) for f in NUMERIC_FIELDS}
                recs.append(Record(
                    **vals, voyage_id=row["voyage_id"],
                    segment=RouteSegment(row["segment"]) if row["segment"] else None,
                    speed_mode=SpeedMode(row["speed_mode"]) if row["speed_mode"] else None,
                ))
        voyages.append(Voyage(entry["id"], Direction(entry["direction"]), recs))
    return voyages


def write_records_csv(records: Sequence[Record], fh: IO[str]) -> None:
    """Write raw records in the default ingest schema."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REQUIRED_FIELDS + OPTIONAL_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in REQUIRED_FIELDS + OPTIONAL_FIELDS])
