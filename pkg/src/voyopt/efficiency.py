"""Surrogate fuel model, voyage totals, efficiency score and gain.

The fuel model is a four-term regression (baseline, cubic speed resistance,
wave and headwind added resistance) fitted to measured fuel rates. Measured
and optimized speed profiles are both pushed through the same estimator so
that their scores are directly comparable.
"""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import SpeedProfile, Voyage, VoyageTotals

MODEL_SCHEMA = "voyopt.fuel-model/1"


class CalibrationError(ValueError):
    pass


class EfficiencyError(ValueError):
    pass


@dataclass(frozen=True)
class FuelModelCoeffs:
    c0: float  # L/h baseline
    c1: float  # L/h per (m/s)^3
    c2: float  # L/h per m (m/s)^2, wave term
    c3: float  # L/h per (m/s)^3, headwind term
    rmse: Optional[float] = None
    rel_rmse: Optional[float] = None

    def as_array(self) -> np.ndarray:
        return np.array([self.c0, self.c1, self.c2, self.c3])


@dataclass(frozen=True)
class NormalizationConstants:
    fuel_max: float  # liters
    time_max: float  # hours

    def __post_init__(self):
        if not (self.fuel_max > 0 and self.time_max > 0):
            raise EfficiencyError("normalization maxima must be positive")


def relative_wind_angle(wind_dir, heading):
    """Angle between the wind's origin and the bow, degrees in [0, 360)."""
    return np.mod(np.asarray(wind_dir, dtype=float) - np.asarray(heading, dtype=float), 360.0)


def _design(sog, wave_height, wind_speed, wind_rel_angle) -> np.ndarray:
    sog = np.asarray(sog, dtype=float)
    head = np.maximum(0.0, np.asarray(wind_speed, dtype=float) * np.cos(np.radians(wind_rel_angle)))
    return np.stack(np.broadcast_arrays(
        np.ones_like(sog), sog ** 3, np.asarray(wave_height, dtype=float) * sog ** 2, head * sog ** 2,
    ), axis=-1)


def fuel_rate_model(sog, wave_height, wind_speed, wind_rel_angle, c: FuelModelCoeffs):
    """Fuel rate in L/h; scalar in, scalar out. Never negative."""
    rate = np.maximum(0.0, _design(sog, wave_height, wind_speed, wind_rel_angle) @ c.as_array())
    return float(rate) if np.ndim(rate) == 0 else rate


def calibrate_fuel_model(voyages: Sequence[Voyage], min_records: int = 100) -> FuelModelCoeffs:
    """Least-squares fit of the surrogate coefficients to measured fuel rates.

    Records lacking weather are skipped. Coefficients c0 and c1 are clamped at
    zero after the fit. RMSE is reported in L/h and relative to the mean rate.
    """
    rows, target = [], []
    for v in voyages:
        wave = v.column("wave_height")
        ok = ~np.isnan(wave) & ~np.isnan(v.column("wind_speed"))
        rel = relative_wind_angle(v.column("wind_dir"), v.column("heading"))
        rows.append(_design(v.column("sog"), wave, v.column("wind_speed"), rel)[ok])
        target.append(v.column("fuel_rate")[ok])
    X = np.concatenate(rows) if rows else np.empty((0, 4))
    y = np.concatenate(target) if target else np.empty(0)
    if len(y) < min_records:
        raise CalibrationError(f"need at least {min_records} records, got {len(y)}")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise CalibrationError("rank-deficient design matrix (speed or weather has no variation)")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    coef[:2] = np.maximum(coef[:2], 0.0)
    resid = y - X @ coef
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    return FuelModelCoeffs(*map(float, coef), rmse=rmse, rel_rmse=rmse / float(np.mean(np.abs(y))))


def voyage_totals(v: Voyage) -> VoyageTotals:
    """Measured fuel (trapezoidal rate integral), elapsed time and track length."""
    ts, rate = v.column("timestamp"), v.column("fuel_rate")
    dt = np.diff(ts)
    fuel = float(np.sum((rate[:-1] + rate[1:]) / 2 * dt) / 3600.0)
    return VoyageTotals(fuel, float(ts[-1] - ts[0]) / 3600.0, float(v.leg_distances.sum()) / 1000.0)


def eff_score(fuel_nm: float, time_nm: float) -> float:
    """One minus the harmonic mean of normalized fuel and time.

    Evaluated exactly on the shortest decimal form of each input and rounded
    once, so decimal inputs give the textbook value (0.2, 0.8 -> 0.68 rather
    than 0.6799999999999999). Symmetric and monotone by construction.
    """
    if not (fuel_nm > 0 and time_nm > 0):
        raise EfficiencyError(f"normalized totals must be positive, got ({fuel_nm}, {time_nm})")
    f, t = Fraction(repr(float(fuel_nm))), Fraction(repr(float(time_nm)))
    return float(1 - 2 * f * t / (f + t))


def score_corpus(voyages: Sequence[Voyage]):
    """Attach totals and Eff-Scores to every voyage.

    Normalization uses the corpus maxima of total fuel and time. Returns the
    scored voyages and the constants, which must be reused for anything scored
    later against this corpus.
    """
    if not voyages:
        raise EfficiencyError("empty corpus")
    totals = [v.totals or voyage_totals(v) for v in voyages]
    norm = NormalizationConstants(max(t.fuel_total for t in totals), max(t.time_total for t in totals))
    scored = [
        replace(v, totals=t, eff_score=eff_score(t.fuel_total / norm.fuel_max, t.time_total / norm.time_max))
        for v, t in zip(voyages, totals)
    ]
    return scored, norm


@dataclass(frozen=True)
class ProfileEstimate:
    fuel: float  # liters
    time: float  # hours
    eff_score: float


@dataclass(frozen=True)
class RouteConditions:
    """Per-record weather and geometry of one voyage, used by the estimator."""

    step_distances: np.ndarray  # meters, one per leg
    wave_height: np.ndarray
    wind_speed: np.ndarray
    wind_rel_angle: np.ndarray

    @classmethod
    def from_voyage(cls, v: Voyage) -> "RouteConditions":
        return cls(
            v.leg_distances, v.column("wave_height"), v.column("wind_speed"),
            relative_wind_angle(v.column("wind_dir"), v.column("heading")),
        )


def estimate_fuel_time(sog, cond: RouteConditions, c: FuelModelCoeffs):
    """Fuel (L) and time (h) of sailing the route at the given per-record SOG.

    Each leg is sailed at the mean of its two endpoint speeds; its fuel is the
    mean of the endpoint rates times the leg duration.
    """
    sog = np.asarray(sog, dtype=float)
    if sog.shape != cond.wave_height.shape:
        raise EfficiencyError("profile length does not match route conditions")
    if np.any(~(sog > 0)):
        raise EfficiencyError("every profile speed must be positive")
    if np.any(~(cond.step_distances > 0)):
        raise EfficiencyError("every step distance must be positive")
    rate = fuel_rate_model(sog, cond.wave_height, cond.wind_speed, cond.wind_rel_angle, c)
    rate = np.atleast_1d(rate)
    dt = cond.step_distances / ((sog[:-1] + sog[1:]) / 2)
    fuel = float(np.sum((rate[:-1] + rate[1:]) / 2 * dt) / 3600.0)
    return fuel, float(np.sum(dt)) / 3600.0


def estimate_profile_efficiency(
    p: Union[SpeedProfile, np.ndarray],
    cond: RouteConditions,
    c: FuelModelCoeffs,
    n: NormalizationConstants,
) -> ProfileEstimate:
    """Estimated fuel, time and Eff-Score of a speed profile.

    Normalized totals above 1 are allowed, so a profile worse than the worst
    training voyage scores below zero.
    """
    sog = p.sog if isinstance(p, SpeedProfile) else p
    fuel, time = estimate_fuel_time(sog, cond, c)
    return ProfileEstimate(fuel, time, eff_score(fuel / n.fuel_max, time / n.time_max))


def eff_gain(meas: float, pred: float) -> float:
    """Relative change of Eff-Score, percent. Undefined for non-positive ``meas``."""
    if not meas > 0:
        raise EfficiencyError(f"gain undefined for measured score {meas}")
    return (pred - meas) / meas * 100.0


# -- persistence --------------------------------------------------------------

def save_fuel_model(path: Union[str, Path], c: FuelModelCoeffs, n: Optional[NormalizationConstants] = None):
    from .util import atomic_write_text

    doc = {"schema": MODEL_SCHEMA, "coefficients": asdict(c),
           "normalization": asdict(n) if n is not None else None}
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_fuel_model(path: Union[str, Path]):
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"{path}: unsupported schema {doc.get('schema')!r}")
    n = doc.get("normalization")
    return FuelModelCoeffs(**doc["coefficients"]), (NormalizationConstants(**n) if n else None)
