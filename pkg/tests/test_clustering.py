import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import make_voyage
from voyopt.clustering import (
    CLUSTER_PERCENTS,
    ClusterError,
    cluster_size,
    load_clusters,
    percentile_clusters,
    save_clusters,
)

BASE = make_voyage("V0000", lat=[57.6, 57.7])


def scored(scores):
    out = []
    for i, s in enumerate(scores):
        vid = f"V{i:04d}"
        recs = [dataclasses.replace(r, voyage_id=vid) for r in BASE.records]
        out.append(dataclasses.replace(BASE, id=vid, records=recs, eff_score=s))
    return out


def test_sizes_for_ten():
    cs = percentile_clusters(scored(np.linspace(0.1, 0.9, 10)))
    assert [len(ids) for _, ids in cs.items()] == [1, 3, 5, 8]
    assert cs.top10 == ("V0009",)


def test_equal_scores_take_lowest_ids():
    cs = percentile_clusters(scored([0.4] * 10))
    assert cs.top25 == ("V0000", "V0001", "V0002")


def test_single_voyage_in_every_cluster():
    cs = percentile_clusters(scored([0.3]))
    assert all(ids == ("V0000",) for _, ids in cs.items())


def test_errors():
    with pytest.raises(ClusterError):
        percentile_clusters([])
    with pytest.raises(ClusterError):
        percentile_clusters([BASE])


@given(st.integers(1, 500), st.sampled_from(sorted(CLUSTER_PERCENTS.values())))
def test_cluster_size_is_ceil(n, p):
    assert cluster_size(p, n) == math.ceil(p * n / 100)


@given(st.lists(st.floats(0.0, 0.99), min_size=1, max_size=60), st.randoms(use_true_random=False))
def test_nested_sorted_oracle_and_order_invariance(scores, rnd):
    vs = scored(scores)
    cs = percentile_clusters(vs)
    oracle = [v.id for v in sorted(vs, key=lambda v: (-v.eff_score, v.id))]
    prev, prev_min = set(), math.inf
    for name, ids in cs.items():
        assert list(ids) == sorted(oracle[:math.ceil(CLUSTER_PERCENTS[name] * len(vs) / 100)])
        assert prev <= set(ids)
        lo = min(v.eff_score for v in vs if v.id in ids)
        assert lo <= prev_min
        prev, prev_min = set(ids), lo
    shuffled = list(vs)
    rnd.shuffle(shuffled)
    assert percentile_clusters(shuffled) == cs


def test_json_round_trip(tmp_path):
    cs = percentile_clusters(scored([0.1, 0.5, 0.3, 0.9]))
    save_clusters(tmp_path / "c.json", cs)
    assert load_clusters(tmp_path / "c.json") == cs
