"""k-nearest-neighbours regression of SOG on route position and weather."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from ..core import Provenance, SpeedProfile, Voyage
from .features import FEATURE_NAMES, cruising_mask, voyage_features

K_CANDIDATES = (1, 3, 5, 9, 15, 25)
SCHEMA = "voyopt.knn/1"


class KnnError(ValueError):
    pass


@dataclass(frozen=True)
class KnnModel:
    features: tuple  # names of the retained feature columns
    columns: tuple  # their indices in the full feature matrix
    means: np.ndarray
    stds: np.ndarray
    X: np.ndarray  # standardized training rows
    y: np.ndarray  # target SOG per row
    k: int = 5
    dropped: tuple = field(default=())

    def with_k(self, k: int) -> "KnnModel":
        if not 1 <= k <= len(self.y):
            raise KnnError(f"k={k} outside [1, {len(self.y)}]")
        return KnnModel(self.features, self.columns, self.means, self.stds, self.X, self.y, k, self.dropped)


def build_from_arrays(F: np.ndarray, y: np.ndarray, k: int = 5, names: Sequence[str] = FEATURE_NAMES) -> KnnModel:
    """Standardize a raw feature matrix; zero-variance columns are dropped."""
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    if F.ndim != 2 or len(F) == 0:
        raise KnnError("no training rows")
    if len(F) != len(y):
        raise KnnError("feature and target row counts differ")
    # exact range test: the std of a constant column can round to ~1e-16
    keep = tuple(int(i) for i in np.flatnonzero(np.ptp(F, axis=0) > 0))
    if not keep:
        raise KnnError("every feature is constant")
    cols = list(keep)
    means = F[:, cols].mean(axis=0)
    stds = F[:, cols].std(axis=0)
    X = (F[:, cols] - means) / stds
    dropped = tuple(names[i] for i in range(F.shape[1]) if i not in keep)
    return KnnModel(tuple(names[i] for i in keep), keep, means, stds, X, y, min(k, len(y)), dropped)


def build_knn(voyages: Sequence[Voyage], k: int = 5, cruising_only: bool = True) -> KnnModel:
    """Feature store from the (Cruising-mode) records of a cluster."""
    if not voyages:
        raise KnnError("empty cluster")
    F, y = [], []
    for v in voyages:
        mask = cruising_mask(v) if cruising_only else np.ones(len(v), dtype=bool)
        F.append(voyage_features(v)[mask])
        y.append(v.column("sog")[mask])
    F = np.concatenate(F)
    y = np.concatenate(y)
    if len(y) < k:
        raise KnnError(f"need at least k={k} training rows, got {len(y)}")
    return build_from_arrays(F, y, k)


def _standardize(m: KnnModel, Q: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    return (Q[:, list(m.columns)] - m.means) / m.stds


def _neighbor_order(m: KnnModel, q: np.ndarray, depth: int) -> np.ndarray:
    # squared distances accumulated one feature at a time, in column order
    d2 = np.zeros(len(m.y))
    for f in range(m.X.shape[1]):
        diff = m.X[:, f] - q[f]
        d2 += diff * diff
    return np.argsort(d2, kind="stable")[:depth]


def knn_predict(m: KnnModel, query) -> Union[float, np.ndarray]:
    """Mean SOG of the k nearest training rows for each raw feature row.

    Distances are Euclidean in standardized space; equal distances resolve
    toward the lower training-row index.
    """
    single = np.ndim(query) == 1
    Qs = _standardize(m, query)
    out = np.empty(len(Qs))
    for n, q in enumerate(Qs):
        idx = _neighbor_order(m, q, m.k)
        out[n] = math.fsum(m.y[idx]) / m.k
    return float(out[0]) if single else out


def select_k(m: KnnModel, candidates: Sequence[int], validation: Sequence[Voyage],
             cruising_only: bool = True) -> int:
    """Candidate k with the lowest validation RMSE; ties go to the smaller k."""
    cands = sorted({int(k) for k in candidates if 1 <= k <= len(m.y)})
    if not cands:
        raise KnnError("no usable k candidates")
    if len(cands) == 1 or not validation:
        return cands[0]
    F, y = [], []
    for v in validation:
        mask = cruising_mask(v) if cruising_only else np.ones(len(v), dtype=bool)
        F.append(voyage_features(v)[mask])
        y.append(v.column("sog")[mask])
    Qs = _standardize(m, np.concatenate(F))
    y = np.concatenate(y)
    if len(y) == 0:
        return cands[0]
    sq_err = np.zeros(len(cands))
    depth = cands[-1]
    for q, target in zip(Qs, y):
        idx = _neighbor_order(m, q, depth)
        for c, k in enumerate(cands):
            pred = math.fsum(m.y[idx[:k]]) / k
            sq_err[c] += (pred - target) ** 2
    rmse = np.sqrt(sq_err / len(y))
    return cands[int(np.argmin(rmse))]


def knn_profile(m: KnnModel, v: Voyage, sog_min: float, sog_max: float) -> SpeedProfile:
    sog = np.clip(knn_predict(m, voyage_features(v)), sog_min, sog_max)
    return SpeedProfile(v.id, v.positions, sog, Provenance.PREDICTED, model="KNN")


def save_knn(path: Union[str, Path], m: KnnModel) -> None:
    from ..util import atomic_write_text

    doc = {
        "schema": SCHEMA, "k": m.k, "features": list(m.features), "columns": list(m.columns),
        "dropped": list(m.dropped), "means": m.means.tolist(), "stds": m.stds.tolist(),
        "X": m.X.tolist(), "y": m.y.tolist(),
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_knn(path: Union[str, Path]) -> KnnModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SCHEMA:
        raise KnnError(f"{path}: unsupported schema")
    return KnnModel(tuple(doc["features"]), tuple(doc["columns"]), np.array(doc["means"]),
                    np.array(doc["stds"]), np.array(doc["X"]), np.array(doc["y"]), doc["k"],
                    tuple(doc["dropped"]))
