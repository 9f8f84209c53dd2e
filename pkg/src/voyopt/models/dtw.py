"""Dynamic time warping and 1-nearest-neighbour profile retrieval."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import Provenance, SpeedProfile, Voyage


class DtwError(ValueError):
    pass


@dataclass(frozen=True)
class DtwConfig:
    band_radius: Optional[int] = None  # Sakoe-Chiba radius in steps
    normalize_inputs: bool = False
    wave_channel: bool = False  # append wave height as a second channel

    def __post_init__(self):
        if self.band_radius is not None and self.band_radius < 0:
            raise DtwError("band_radius must be >= 0")


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _zscore(a: np.ndarray) -> np.ndarray:
    sd = np.where(np.ptp(a, axis=0) > 0, a.std(axis=0), 1.0)
    return (a - a.mean(axis=0)) / sd


def dtw_distance(a, b, cfg: DtwConfig = DtwConfig()) -> float:
    """Cumulative absolute-difference cost of the optimal warping path.

    D(i, j) = |a_i - b_j| + min(D(i-1, j), D(i, j-1), D(i-1, j-1)) with the
    path anchored at both ends. Multichannel inputs (n, c) use the L1 norm of
    the per-step difference. Cells are filled one anti-diagonal at a time.
    """
    a, b = _as_2d(a), _as_2d(b)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise DtwError("sequences must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise DtwError("sequences have different channel counts")
    r = cfg.band_radius
    if r is not None and abs(n - m) > r:
        raise DtwError(f"band radius {r} cannot absorb length difference {abs(n - m)}")
    if cfg.normalize_inputs:
        a, b = _zscore(a), _zscore(b)

    cost = np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)
    if r is not None:
        ii, jj = np.indices((n, m))
        cost = np.where(np.abs(ii - jj) <= r, cost, np.inf)

    # D padded with an inf border: D[i+1, j+1] holds the cell (i, j)
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for s in range(n + m - 1):
        i = np.arange(max(0, s - m + 1), min(n, s + 1))
        j = s - i
        best = np.minimum(np.minimum(D[i, j + 1], D[i + 1, j]), D[i, j])
        D[i + 1, j + 1] = cost[i, j] + best
    return float(D[n, m])


def _channels(v: Voyage, cfg: DtwConfig) -> np.ndarray:
    sog = v.column("sog")
    if cfg.wave_channel:
        return np.column_stack([sog, v.column("wave_height")])
    return sog


def resample_profile(src_positions, src_sog, dst_positions) -> np.ndarray:
    return np.interp(dst_positions, src_positions, src_sog)


def nn1_dtw_match(cluster: Sequence[Voyage], query: Voyage, cfg: DtwConfig = DtwConfig()):
    """Cluster voyage closest to ``query`` under DTW and the distance.

    Ties go to the higher Eff-Score, then the lower id.
    """
    candidates = [v for v in cluster if v.id != query.id]
    if not candidates:
        raise DtwError("empty cluster")
    q = _channels(query, cfg)
    scored = [(dtw_distance(_channels(v, cfg), q, cfg), v) for v in candidates]
    dist, best = min(scored, key=lambda t: (t[0], -(t[1].eff_score or 0.0), t[1].id))
    return best, dist


def nn1_dtw_predict(cluster: Sequence[Voyage], query: Voyage, cfg: DtwConfig = DtwConfig(),
                    sog_min: float = 0.0, sog_max: float = np.inf) -> SpeedProfile:
    """Speed profile of the most similar efficient voyage, laid onto the query's positions."""
    best, dist = nn1_dtw_match(cluster, query, cfg)
    sog = resample_profile(best.positions, best.column("sog"), query.positions)
    return SpeedProfile(query.id, query.positions, np.clip(sog, sog_min, sog_max), Provenance.PREDICTED,
                        model="1NN-DTW", meta={"match": best.id, "distance": dist})
