"""Per-record input features shared by the kNN and LSTM models."""

from __future__ import annotations

import numpy as np

from ..core import SpeedMode, Voyage
from ..efficiency import relative_wind_angle

FEATURE_NAMES = ("position", "wave_height", "wind_speed", "wind_rel_cos", "wind_rel_sin", "current_along")


def voyage_features(v: Voyage) -> np.ndarray:
    """(n_records, 6) matrix: along-track fraction plus five weather features.

    Wind enters as the cosine/sine of its angle off the bow; current as its
    component along the heading.
    """
    rel = np.radians(relative_wind_angle(v.column("wind_dir"), v.column("heading")))
    cur_rel = np.radians(v.column("current_dir") - v.column("heading"))
    return np.column_stack([
        v.positions,
        v.column("wave_height"),
        v.column("wind_speed"),
        np.cos(rel),
        np.sin(rel),
        v.column("current_speed") * np.cos(cur_rel),
    ])


def cruising_mask(v: Voyage) -> np.ndarray:
    return np.array([m is SpeedMode.CRUISING for m in v.speed_modes()], dtype=bool)
