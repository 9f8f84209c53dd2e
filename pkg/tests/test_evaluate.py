import dataclasses
import functools

import numpy as np
import pytest

from helpers import make_voyage, world
from voyopt.core import WeatherState
from voyopt.efficiency import FuelModelCoeffs, RouteConditions, eff_gain, estimate_fuel_time
from voyopt.evaluate import (
    IDENTITY,
    MODELS,
    EvaluationRecord,
    ExperimentConfig,
    dominant_weather_state,
    enforce_arrival,
    gain_table,
    run_experiment,
    split_voyages,
    weather_breakdown,
)
from voyopt.models.lstm import LstmConfig
from voyopt.weather import WeatherThresholds

SMALL = ExperimentConfig(lstm=LstmConfig(epochs=3, hidden_dim=4), hmm_starts=2, hmm_max_iter=20, seed=3)


@functools.lru_cache(maxsize=None)
def small_run(n_jobs=1):
    vs, _, _ = world(n_voyages=40, seed=9)
    return run_experiment(vs, SMALL, n_jobs=n_jobs)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(split=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(models=("GRU",))
    with pytest.raises(ValueError):
        ExperimentConfig(clusters=("Top99Pr",))
    assert ExperimentConfig(include_identity=False).run_models == MODELS


def test_split_deterministic_and_disjoint():
    vs, _, _ = world()
    a_tr, a_te = split_voyages(vs, 0.7, 1)
    b_tr, b_te = split_voyages(list(reversed(vs)), 0.7, 1)
    assert [v.id for v in a_tr] == [v.id for v in b_tr]
    assert not {v.id for v in a_tr} & {v.id for v in a_te}
    assert len(a_tr) == round(0.7 * len(vs)) and len(a_tr) + len(a_te) == len(vs)
    assert [v.id for v in split_voyages(vs, 0.7, 2)[0]] != [v.id for v in a_tr]


def test_leakage_guard_and_completeness():
    res = small_run()
    test = set(res.test_ids)
    for _, ids in res.clusters.items():
        assert not set(ids) & test
        assert set(ids) <= set(res.train_ids)
    assert not res.partial
    n_cells = len(SMALL.clusters) * len(SMALL.run_models)
    assert len(res.records) == n_cells * len(res.test_ids)


def test_identity_gain_is_exactly_zero():
    recs = [r for r in small_run().records if r.model == IDENTITY]
    assert recs and all(r.gain_pct == 0.0 and r.eff_pred == r.eff_meas and not r.constrained for r in recs)


def test_record_gains_consistent():
    for r in small_run().records:
        if r.gain_pct is not None:
            assert abs(r.gain_pct - eff_gain(r.eff_meas, r.eff_pred)) <= 1e-12


def test_arrival_constraint_holds_after_enforcement():
    from voyopt.efficiency import calibrate_fuel_model
    from voyopt.evaluate import make_predictor, fit_model, optimize_voyage

    vs, _, _ = world(n_voyages=40, seed=9)
    train, test = split_voyages(vs, 0.7, 3)
    coeffs = calibrate_fuel_model(train)
    predict = make_predictor("HMM", fit_model("HMM", train[:10], SMALL), SMALL)
    for v in test:
        cond = RouteConditions.from_voyage(v)
        measured = estimate_fuel_time(v.column("sog"), cond, coeffs)[1]
        limit = measured * (1 + SMALL.slack)
        sog, _ = optimize_voyage(v, predict, cond, coeffs, limit, SMALL)
        assert estimate_fuel_time(sog, cond, coeffs)[1] <= limit * (1 + 1e-12)


def test_enforce_arrival_scales_only_when_needed():
    from voyopt.core import SpeedMode

    n = 6
    v = make_voyage(lat=np.linspace(57.62, 57.70, n), sog=np.full(n, 4.0),
                    modes=[SpeedMode.MANEUVERING] + [SpeedMode.CRUISING] * (n - 2) + [SpeedMode.MANEUVERING])
    cond = RouteConditions(v.leg_distances, np.zeros(n), np.zeros(n), np.zeros(n))
    c = FuelModelCoeffs(50.0, 1.0, 0.0, 0.0)
    t_meas = estimate_fuel_time(v.column("sog"), cond, c)[1]
    fast = np.full(n, 4.5)
    assert enforce_arrival(fast, v, cond, c, t_meas * 1.05, 9.0) == (fast, False) or \
        enforce_arrival(fast, v, cond, c, t_meas * 1.05, 9.0)[1] is False
    slow = np.array([4.0, 2.0, 2.0, 2.0, 2.0, 4.0])
    sog, constrained = enforce_arrival(slow, v, cond, c, t_meas * 1.05, 9.0)
    assert constrained
    assert sog[0] == 4.0 and sog[-1] == 4.0  # maneuvering untouched
    assert np.allclose(sog[1:-1], sog[1])  # uniform scaling of the cruising part
    t = estimate_fuel_time(sog, cond, c)[1]
    assert t <= t_meas * 1.05 and t == pytest.approx(t_meas * 1.05, rel=1e-9)


def test_gain_table_averages_recompute_exactly():
    t = gain_table(small_run().records)
    for avg in t.averages:
        cells = [c for c in t.cells if c.model == avg.model]
        assert avg.mean_gain_pct == float(np.mean([c.mean_gain_pct for c in cells]))
        assert avg.improved_count == float(np.mean([c.improved_count for c in cells]))
    for c in t.cells:
        assert 0 <= c.improved_count <= c.test_count


def _rec(gain, state=WeatherState.CALM, model="HMM", cluster="Top10Pr", vid="V1"):
    return EvaluationRecord(vid, cluster, model, 0.5, 0.5 * (1 + gain / 100), gain, state)


def test_breakdown_hand_arithmetic():
    t = weather_breakdown([_rec(2.0), _rec(4.0, vid="V2")])
    cell = t.cell("HMM", WeatherState.CALM)
    assert cell.mean_gain_pct == 3.0 and cell.std_gain_pct == 1.0 and cell.n_voyages == 2
    assert t.cell("HMM", WeatherState.ROUGH).absent and t.cell("HMM", WeatherState.MODERATE).absent


def test_gain_table_counts_and_undefined_gains():
    recs = [_rec(2.0), _rec(-1.0, vid="V2"), _rec(0.0, vid="V3"),
            EvaluationRecord("V4", "Top10Pr", "HMM", 0.0, 0.1, None, WeatherState.CALM)]
    cell = gain_table(recs).cell("Top10Pr", "HMM")
    assert cell.improved_count == 1 and cell.test_count == 4
    assert cell.mean_gain_pct == pytest.approx(1.0 / 3)


def test_dominant_state_ties_go_calmer():
    v = make_voyage(lat=[57.6, 57.62, 57.64, 57.66], wave_height=[0.1, 0.2, 1.5, 1.6])
    assert dominant_weather_state(v, WeatherThresholds()) is WeatherState.CALM
    v = make_voyage(lat=[57.6, 57.62, 57.64], wave_height=[0.1, 1.5, 1.6])
    assert dominant_weather_state(v, WeatherThresholds()) is WeatherState.ROUGH


def test_runs_are_deterministic():
    vs, _, _ = world(n_voyages=40, seed=9)
    again = run_experiment(vs, SMALL)
    assert again.records == small_run().records


def test_process_pool_gives_identical_records():
    assert small_run(n_jobs=2).records == small_run().records
    assert small_run(n_jobs=2).profiles == small_run().profiles


def test_failing_cell_is_recorded(monkeypatch):
    import voyopt.evaluate as ev

    real = ev.train_model

    def flaky(name, cluster, cfg):
        if name == "KNN":
            raise ValueError("boom")
        return real(name, cluster, cfg)

    monkeypatch.setattr(ev, "train_model", flaky)
    vs, _, _ = world(n_voyages=40, seed=9)
    cfg = dataclasses.replace(SMALL, models=("KNN", "HMM"), clusters=("Top50Pr",))
    res = run_experiment(vs, cfg)
    assert res.partial and res.failures == [("Top50Pr", "KNN", "boom")]
    assert {r.model for r in res.records} == {"HMM", IDENTITY}
