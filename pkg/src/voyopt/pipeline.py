"""Glue from raw files to fused, labelled voyages."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence, Union

from .core import RouteConfig
from .ingest import default_cruising_threshold, parse_records, relabel, resample_1min, tag_voyages
from .weather import attach_weather, read_grids

logger = logging.getLogger(__name__)


def load_raw_records(paths: Sequence[Union[str, Path]], schema: Optional[dict] = None) -> list:
    records, dropped = [], 0
    for path in paths:
        result = parse_records(path, schema)
        records.extend(result.records)
        dropped += result.dropped
    records.sort(key=lambda r: r.timestamp)
    logger.info("parsed %d records from %d files (%d dropped)", len(records), len(paths), dropped)
    return records


def build_voyages(records, route: RouteConfig, auto_threshold: bool = False):
    """Resample, tag and (optionally) pick the cruising threshold from the SOG histogram.

    Returns the voyages and the route actually used.
    """
    resampled = resample_1min(records)
    voyages = tag_voyages(resampled, route)
    if auto_threshold and voyages:
        sogs = [r.sog for v in voyages for r in v.records]
        route = replace(route, cruising_sog_threshold=default_cruising_threshold(sogs))
        logger.info("cruising threshold from SOG histogram: %.3f m/s", route.cruising_sog_threshold)
        voyages = [relabel(v, route) for v in voyages]
    logger.info("tagged %d voyages", len(voyages))
    return voyages, route


def fuse(voyages, grids_manifest: Union[str, Path]):
    grids = read_grids(grids_manifest)
    return [attach_weather(v, grids) for v in voyages]


def load_data_dir(data_dir: Union[str, Path], route: Optional[RouteConfig] = None,
                  schema: Optional[dict] = None, auto_threshold: bool = False):
    """Parse, resample, tag and fuse everything listed in ``<data_dir>/manifest.json``."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    if route is None:
        route = RouteConfig.from_dict(manifest["route"])
    records = load_raw_records([data_dir / p for p in manifest["records"]], schema)
    voyages, route = build_voyages(records, route, auto_threshold)
    return fuse(voyages, data_dir / manifest["grids_manifest"]), route
