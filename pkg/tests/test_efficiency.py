import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import make_voyage, with_model_fuel, world
from voyopt.core import SpeedProfile
from voyopt.efficiency import (
    CalibrationError,
    EfficiencyError,
    FuelModelCoeffs,
    NormalizationConstants,
    RouteConditions,
    calibrate_fuel_model,
    eff_gain,
    eff_score,
    estimate_fuel_time,
    estimate_profile_efficiency,
    fuel_rate_model,
    load_fuel_model,
    save_fuel_model,
    score_corpus,
    voyage_totals,
)

TRUE = FuelModelCoeffs(110.0, 0.6, 25.0, 0.04)


def test_fuel_rate_examples():
    assert fuel_rate_model(0.0, 2.0, 10.0, 0.0, TRUE) == 110.0
    assert fuel_rate_model(2.0, 0.0, 0.0, 0.0, FuelModelCoeffs(1, 0.5, 0, 0)) == 5.0
    assert fuel_rate_model(2.0, 1.0, 0.0, 0.0, FuelModelCoeffs(1, 0.5, 0.2, 0)) == pytest.approx(5.8, abs=1e-15)


def test_fuel_rate_headwind_only():
    c = FuelModelCoeffs(0, 0, 0, 1.0)
    assert fuel_rate_model(2.0, 0.0, 5.0, 0.0, c) == pytest.approx(20.0)
    assert fuel_rate_model(2.0, 0.0, 5.0, 180.0, c) == 0.0  # tailwind adds nothing
    assert fuel_rate_model(1.0, 0.0, 0.0, 0.0, FuelModelCoeffs(-5, 0, 0, 0)) == 0.0  # clamped


def test_calibration_recovers_noise_free_coefficients():
    vs, _, _ = world()
    c = calibrate_fuel_model(with_model_fuel(vs, TRUE))
    assert np.all(np.abs(c.as_array() - TRUE.as_array()) <= 1e-8)
    assert c.rmse < 1e-8


def test_calibration_with_noise_within_three_standard_errors():
    from voyopt.efficiency import _design, relative_wind_angle

    vs, _, _ = world()
    clean = with_model_fuel(vs, TRUE)
    rng = np.random.default_rng(0)
    X = np.concatenate([_design(v.column("sog"), v.column("wave_height"), v.column("wind_speed"),
                                relative_wind_angle(v.column("wind_dir"), v.column("heading"))) for v in clean])
    cov = 0.1 ** 2 * np.linalg.inv(X.T @ X)  # normal-equation covariance of the estimate
    noisy = []
    import dataclasses
    for v in clean:
        recs = [dataclasses.replace(r, fuel_rate=r.fuel_rate + float(rng.normal(0, 0.1))) for r in v.records]
        noisy.append(dataclasses.replace(v, records=recs))
    c = calibrate_fuel_model(noisy)
    assert np.all(np.abs(c.as_array() - TRUE.as_array()) <= 3 * np.sqrt(np.diag(cov)))


def test_calibration_degenerate_inputs():
    v = make_voyage(lat=np.linspace(57.6, 57.7, 150), sog=np.zeros(150), wave_height=1.0, wind_speed=3.0,
                    wind_dir=0.0)
    with pytest.raises(CalibrationError):
        calibrate_fuel_model([v])
    with pytest.raises(CalibrationError):
        calibrate_fuel_model([v], min_records=1000)


def test_voyage_totals_constant_rate():
    v = make_voyage(lat=[57.6, 57.61], t=[0.0, 3600.0], fuel=[10.0, 10.0])
    t = voyage_totals(v)
    assert t.fuel_total == 10.0 and t.time_total == 1.0


def test_voyage_totals_one_km_leg():
    dlat = 1.0 / (6371.0 * math.pi / 180.0)  # 1 km along a meridian
    v = make_voyage(lat=[57.6, 57.6 + dlat])
    assert voyage_totals(v).distance_total == pytest.approx(1.0, rel=1e-3)


def test_totals_match_generator_bookkeeping():
    vs, corpus, _ = world()
    ts = np.array([r.timestamp for r in corpus.records])
    rate = np.array([r.fuel_rate for r in corpus.records])
    for v in vs:
        # a one-minute mean stamped t stands for the window centred on t + 30 s
        m = (ts >= v.records[0].timestamp + 30) & (ts <= v.records[-1].timestamp + 30)
        truth = np.sum((rate[m][1:] + rate[m][:-1]) / 2 * np.diff(ts[m])) / 3600
        assert voyage_totals(v).fuel_total == pytest.approx(truth, rel=5e-3)


def test_eff_score_examples():
    assert eff_score(1, 1) == 0.0
    assert eff_score(0.5, 0.5) == 0.5
    assert eff_score(0.2, 0.8) == 0.68
    with pytest.raises(EfficiencyError):
        eff_score(0.0, 0.5)


GRID = np.linspace(0.02, 1.0, 50)


def test_eff_score_symmetric_and_strictly_decreasing_on_grid():
    S = np.array([[eff_score(a, b) for b in GRID] for a in GRID])
    assert np.array_equal(S, S.T)
    assert np.all(np.diff(S, axis=0) < 0) and np.all(np.diff(S, axis=1) < 0)
    assert S.min() == 0.0 and S.max() < 1.0


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_eff_score_range_and_symmetry(a, b):
    s = eff_score(a, b)
    assert 0.0 <= s < 1.0
    assert s == eff_score(b, a)


def test_score_corpus_two_voyages():
    import dataclasses

    from voyopt.core import VoyageTotals

    a = dataclasses.replace(make_voyage("A", lat=[57.6, 57.7]), totals=VoyageTotals(10.0, 1.0, 1.0))
    b = dataclasses.replace(make_voyage("B", lat=[57.6, 57.7]), totals=VoyageTotals(20.0, 2.0, 1.0))
    scored, norm = score_corpus([a, b])
    assert [v.eff_score for v in scored] == [0.5, 0.0]
    assert norm == NormalizationConstants(20.0, 2.0)
    with pytest.raises(EfficiencyError):
        score_corpus([])


def test_score_corpus_range():
    vs, _, _ = world()
    scored, _ = score_corpus(vs)
    assert all(0.0 <= v.eff_score < 1.0 for v in scored)


def test_estimator_unit_construction():
    cond = RouteConditions(np.array([3600.0]), np.zeros(2), np.zeros(2), np.zeros(2))
    fuel, time = estimate_fuel_time([1.0, 1.0], cond, FuelModelCoeffs(10.0, 0, 0, 0))
    assert time == 1.0 and fuel == 10.0


def test_estimator_speed_doubling_scaling():
    rng = np.random.default_rng(0)
    n = 30
    cond = RouteConditions(rng.uniform(100, 300, n - 1), np.zeros(n), np.zeros(n), np.zeros(n))
    sog = np.full(n, 2.0)
    c = FuelModelCoeffs(0, 0.7, 0, 0)
    f1, t1 = estimate_fuel_time(sog, cond, c)
    f2, t2 = estimate_fuel_time(2 * sog, cond, c)
    assert t2 == pytest.approx(t1 / 2, rel=1e-14)
    assert f2 == pytest.approx(4 * f1, rel=1e-14)


def test_estimator_agrees_with_measured_totals():
    vs, _, _ = world()
    c = calibrate_fuel_model(vs)
    scored, norm = score_corpus(vs)
    for v in scored[:8]:
        est = estimate_profile_efficiency(SpeedProfile(v.id, v.positions, v.column("sog")),
                                          RouteConditions.from_voyage(v), c, norm)
        assert est.fuel == pytest.approx(v.totals.fuel_total, rel=0.02)
        assert est.time == pytest.approx(v.totals.time_total, rel=0.02)


def test_estimator_rejects_bad_inputs():
    cond = RouteConditions(np.array([100.0]), np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(EfficiencyError):
        estimate_fuel_time([1.0, 0.0], cond, TRUE)
    with pytest.raises(EfficiencyError):
        estimate_fuel_time([1.0, 1.0, 1.0], cond, TRUE)
    zero = RouteConditions(np.array([0.0]), np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(EfficiencyError):
        estimate_fuel_time([1.0, 1.0], zero, TRUE)


def test_worse_than_worst_scores_negative():
    cond = RouteConditions(np.array([3600.0]), np.zeros(2), np.zeros(2), np.zeros(2))
    est = estimate_profile_efficiency(np.array([0.5, 0.5]), cond, FuelModelCoeffs(10.0, 0, 0, 0),
                                      NormalizationConstants(1.0, 1.0))
    assert est.eff_score < 0


@pytest.mark.parametrize("meas,pred,gain", [(0.5, 0.55, 10.0), (0.4, 0.4, 0.0), (0.5, 0.45, -10.0)])
def test_eff_gain_examples(meas, pred, gain):
    assert eff_gain(meas, pred) == pytest.approx(gain, abs=1e-12)


@given(st.floats(1e-9, 1.0))
def test_eff_gain_identity(x):
    assert eff_gain(x, x) == 0.0


def test_eff_gain_undefined():
    with pytest.raises(EfficiencyError):
        eff_gain(0.0, 0.3)


def test_fuel_model_file_round_trip(tmp_path):
    save_fuel_model(tmp_path / "f.json", TRUE, NormalizationConstants(100.0, 1.0))
    c, n = load_fuel_model(tmp_path / "f.json")
    assert c == TRUE and n == NormalizationConstants(100.0, 1.0)
