"""Nested top-percentile clusters of voyages by Eff-Score."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from .core import Voyage

CLUSTER_PERCENTS = {"Top10Pr": 10, "Top25Pr": 25, "Top50Pr": 50, "Top75Pr": 75}


class ClusterError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterSet:
    top10: tuple
    top25: tuple
    top50: tuple
    top75: tuple

    def get(self, name: str) -> tuple:
        return getattr(self, name.lower().replace("pr", ""))

    def items(self):
        return [(name, self.get(name)) for name in CLUSTER_PERCENTS]

    def to_json(self) -> str:
        return json.dumps({name: sorted(ids) for name, ids in self.items()}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ClusterSet":
        d = json.loads(text)
        return cls(*(tuple(d[name]) for name in CLUSTER_PERCENTS))


def cluster_size(percent: int, n: int) -> int:
    """ceil(percent/100 * n) in integer arithmetic."""
    return -(-percent * n // 100)


def percentile_clusters(voyages: Sequence[Voyage]) -> ClusterSet:
    """Best ``ceil(P% * N)`` voyages for P in 10, 25, 50, 75.

    Voyages are ranked by descending score, ties broken by ascending id, so
    the four sets are nested and independent of input order. Each set holds
    its ids sorted, the same canonical form as the JSON file.
    """
    if not voyages:
        raise ClusterError("empty corpus")
    if any(v.eff_score is None for v in voyages):
        raise ClusterError("every voyage must be scored before clustering")
    ranked = [v.id for v in sorted(voyages, key=lambda v: (-v.eff_score, v.id))]
    n = len(ranked)
    sets = [tuple(sorted(ranked[:cluster_size(p, n)])) for p in CLUSTER_PERCENTS.values()]
    return ClusterSet(*sets)


def save_clusters(path: Union[str, Path], cs: ClusterSet) -> None:
    from .util import atomic_write_text

    atomic_write_text(path, cs.to_json())


def load_clusters(path: Union[str, Path]) -> ClusterSet:
    return ClusterSet.from_json(Path(path).read_text())
