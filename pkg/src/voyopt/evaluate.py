"""Train every model on every cluster, optimize test voyages and tabulate gains."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .clustering import CLUSTER_PERCENTS, ClusterSet, percentile_clusters
from .core import WEATHER_STATES, Voyage, WeatherState
from .efficiency import (
    FuelModelCoeffs,
    NormalizationConstants,
    RouteConditions,
    calibrate_fuel_model,
    eff_gain,
    estimate_fuel_time,
    estimate_profile_efficiency,
    score_corpus,
)
from .models.dtw import DtwConfig, nn1_dtw_predict
from .models.features import cruising_mask
from .models.hmm import build_speed_policy, fit_hmm, hmm_predict, weather_observations
from .models.knn import K_CANDIDATES, build_knn, knn_profile, select_k
from .models.lstm import LstmConfig, fit_lstm, lstm_predict
from .util import rng_stream
from .weather import WeatherThresholds, label_weather_state

logger = logging.getLogger(__name__)

MODELS = ("LSTM", "KNN", "1NN-DTW", "HMM")
IDENTITY = "Identity"
STREAM_SPLIT = 2


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    split: float = 0.7
    clusters: Tuple[str, ...] = tuple(CLUSTER_PERCENTS)
    models: Tuple[str, ...] = MODELS
    include_identity: bool = True
    slack: float = 0.05
    sog_min: float = 0.5
    sog_max: float = 9.0
    seed: int = 42
    knn_candidates: Tuple[int, ...] = K_CANDIDATES
    hmm_bins: int = 20
    hmm_starts: int = 5
    hmm_max_iter: int = 50
    lstm: LstmConfig = LstmConfig()
    dtw: DtwConfig = DtwConfig()
    thresholds: WeatherThresholds = WeatherThresholds()
    plot_cluster: str = "Top10Pr"
    plot_voyages: int = 1

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if self.slack < 0:
            raise ValueError("slack must be non-negative")
        unknown = set(self.models) - set(MODELS) - {IDENTITY}
        if unknown:
            raise ValueError(f"unknown models: {sorted(unknown)}")
        unknown = set(self.clusters) - set(CLUSTER_PERCENTS)
        if unknown:
            raise ValueError(f"unknown clusters: {sorted(unknown)}")

    @property
    def run_models(self) -> Tuple[str, ...]:
        models = tuple(m for m in MODELS if m in self.models)
        return models + ((IDENTITY,) if self.include_identity or IDENTITY in self.models else ())


@dataclass(frozen=True)
class EvaluationRecord:
    voyage_id: str
    cluster: str
    model: str
    eff_meas: float
    eff_pred: float
    gain_pct: Optional[float]  # None where the measured score is not positive
    weather_state: WeatherState
    constrained: bool = False


@dataclass
class ExperimentResult:
    records: List[EvaluationRecord]
    train_ids: List[str]
    test_ids: List[str]
    clusters: ClusterSet
    coeffs: FuelModelCoeffs
    norm: NormalizationConstants
    profiles: Dict[str, Dict[str, list]] = field(default_factory=dict)
    failures: List[Tuple[str, str, str]] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def split_voyages(voyages: Sequence[Voyage], fraction: float, seed: int):
    """Seeded split by voyage id into (train, test)."""
    ordered = sorted(voyages, key=lambda v: v.id)
    perm = rng_stream(seed, STREAM_SPLIT).permutation(len(ordered))
    n_train = int(round(fraction * len(ordered)))
    n_train = min(max(n_train, 1), len(ordered) - 1)
    train = sorted((ordered[i] for i in perm[:n_train]), key=lambda v: v.id)
    test = sorted((ordered[i] for i in perm[n_train:]), key=lambda v: v.id)
    return train, test


def dominant_weather_state(v: Voyage, th: WeatherThresholds) -> WeatherState:
    """Modal threshold label over the voyage's records; ties go to the calmer state."""
    counts = Counter(label_weather_state(w, th) for w in v.column("wave_height"))
    return max(WEATHER_STATES, key=lambda s: (counts.get(s, 0), -WEATHER_STATES.index(s)))


def merge_cruising(pred_sog: np.ndarray, v: Voyage) -> np.ndarray:
    """Predicted speeds on Cruising records, measured speeds elsewhere."""
    return np.where(cruising_mask(v), pred_sog, v.column("sog"))


def enforce_arrival(sog: np.ndarray, v: Voyage, cond: RouteConditions, coeffs: FuelModelCoeffs,
                    time_limit: float, sog_max: float):
    """Uniformly speed up the Cruising part until the estimated time meets ``time_limit``.

    Returns the adjusted speeds and whether the constraint had to be applied.
    """
    _, t = estimate_fuel_time(sog, cond, coeffs)
    if t <= time_limit:
        return sog, False
    mask = cruising_mask(v)

    def scaled(s):
        return np.where(mask, np.minimum(sog * s, np.maximum(sog, sog_max)), sog)

    def time_at(s):
        return estimate_fuel_time(scaled(s), cond, coeffs)[1]

    lo, hi = 1.0, 2.0
    while time_at(hi) > time_limit:
        hi *= 2.0
        if hi > 1e6:
            logger.warning("voyage %s: arrival constraint unattainable at sog_max", v.id)
            return scaled(hi), True
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if time_at(mid) > time_limit:
            lo = mid
        else:
            hi = mid
    return scaled(hi), True


Predictor = Callable[[Voyage], np.ndarray]


def fit_model(name: str, cluster: Sequence[Voyage], cfg: ExperimentConfig):
    """Fit ``name`` on a cluster and return its trained artifact.

    KNN gives a KnnModel, HMM a (HmmModel, SpeedPolicy) pair, LSTM a
    TrainResult, 1NN-DTW the cluster voyages themselves, Identity ``None``.
    """
    if name == IDENTITY:
        return None
    if name == "KNN":
        ordered = sorted(cluster, key=lambda v: v.id)
        # every fifth voyage (by id) validates the choice of k
        validation = ordered[4::5] if len(ordered) >= 5 else []
        held_out = {v.id for v in validation}
        fit_part = [v for v in ordered if v.id not in held_out]
        k = select_k(build_knn(fit_part, k=1), cfg.knn_candidates, validation)
        model = build_knn(ordered, k=1)
        return model.with_k(min(k, len(model.y)))
    if name == "1NN-DTW":
        if not cluster:
            raise ExperimentError("empty cluster")
        return list(cluster)
    if name == "HMM":
        seqs = [weather_observations(v) for v in cluster]
        hmm = fit_hmm(seqs, seed=cfg.seed, max_iter=cfg.hmm_max_iter, n_starts=cfg.hmm_starts,
                      min_sequences=min(3, len(seqs)))
        return hmm, build_speed_policy(cluster, hmm, cfg.hmm_bins)
    if name == "LSTM":
        return fit_lstm(cluster, replace(cfg.lstm, seed=cfg.seed))
    raise ExperimentError(f"unknown model {name}")


def make_predictor(name: str, artifact, cfg: ExperimentConfig) -> Predictor:
    """Per-voyage raw SOG predictor from a trained artifact (see ``fit_model``)."""
    lo, hi = cfg.sog_min, cfg.sog_max
    if name == IDENTITY:
        return lambda v: np.asarray(v.column("sog"), dtype=float).copy()
    if name == "KNN":
        return lambda v: knn_profile(artifact, v, lo, hi).sog
    if name == "1NN-DTW":
        return lambda v: nn1_dtw_predict(artifact, v, cfg.dtw, lo, hi).sog
    if name == "HMM":
        hmm, policy = artifact
        return lambda v: hmm_predict(hmm, policy, v, lo, hi).sog
    if name == "LSTM":
        return lambda v: lstm_predict(artifact.params, artifact.standardizer, v, lo, hi,
                                         artifact.config.window).sog
    raise ExperimentError(f"unknown model {name}")


def train_model(name: str, cluster: Sequence[Voyage], cfg: ExperimentConfig) -> Predictor:
    return make_predictor(name, fit_model(name, cluster, cfg), cfg)


def optimize_voyage(v: Voyage, predict: Predictor, cond: RouteConditions, coeffs: FuelModelCoeffs,
                    time_limit: float, cfg: ExperimentConfig):
    """Predicted Cruising speeds merged with measured maneuvering, arrival constraint enforced."""
    return enforce_arrival(merge_cruising(predict(v), v), v, cond, coeffs, time_limit, cfg.sog_max)


@dataclass(frozen=True)
class _CellContext:
    test: Tuple[Voyage, ...]
    conds: Dict[str, RouteConditions]
    meas: Dict[str, object]
    states: Dict[str, WeatherState]
    coeffs: FuelModelCoeffs
    norm: NormalizationConstants
    cfg: ExperimentConfig
    plot_ids: Tuple[str, ...]


def _run_cell(ctx: _CellContext, cname: str, model: str, cluster: Sequence[Voyage]):
    """One (cluster, model) job: returns (records, plotted profiles, error message or None)."""
    cfg = ctx.cfg
    logger.info("cluster %s (%d voyages): %s", cname, len(cluster), model)
    try:
        predict = train_model(model, cluster, cfg)
        cell, plotted = [], {}
        for v in ctx.test:
            limit = ctx.meas[v.id].time * (1.0 + cfg.slack)
            sog, constrained = optimize_voyage(v, predict, ctx.conds[v.id], ctx.coeffs, limit, cfg)
            pred = estimate_profile_efficiency(sog, ctx.conds[v.id], ctx.coeffs, ctx.norm)
            m = ctx.meas[v.id].eff_score
            gain = eff_gain(m, pred.eff_score) if m > 0 else None
            cell.append(EvaluationRecord(v.id, cname, model, m, pred.eff_score, gain,
                                         ctx.states[v.id], constrained))
            if v.id in ctx.plot_ids:
                plotted[v.id] = sog.tolist()
        return cell, plotted, None
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return [], {}, str(exc)


def run_experiment(voyages: Sequence[Voyage], cfg: ExperimentConfig = ExperimentConfig(),
                   coeffs: Optional[FuelModelCoeffs] = None, n_jobs: int = 1) -> ExperimentResult:
    """Full train/optimize/evaluate loop over clusters and models.

    Voyages must carry weather and speed modes. The split happens first; fuel
    calibration, normalization maxima and clusters all come from the training
    part only. A failing (cluster, model) cell is logged and skipped.
    ``n_jobs > 1`` runs cells in worker processes; results are assembled in
    (cluster, model) order either way.
    """
    train, test = split_voyages(voyages, cfg.split, cfg.seed)
    if coeffs is None:
        coeffs = calibrate_fuel_model(train)
    scored, norm = score_corpus(train)
    clusters = percentile_clusters(scored)
    by_id = {v.id: v for v in scored}
    test_ids = [v.id for v in test]
    for name, ids in clusters.items():
        leak = set(ids) & set(test_ids)
        if leak:
            raise ExperimentError(f"leakage: test voyages {sorted(leak)} in {name}")

    conds = {v.id: RouteConditions.from_voyage(v) for v in test}
    meas = {v.id: estimate_profile_efficiency(v.column("sog"), conds[v.id], coeffs, norm) for v in test}
    states = {v.id: dominant_weather_state(v, cfg.thresholds) for v in test}
    plot_ids = test_ids[:cfg.plot_voyages]
    test_by_id = {v.id: v for v in test}
    profiles = {vid: {"positions": test_by_id[vid].positions.tolist(),
                      "Measured": test_by_id[vid].column("sog").tolist()}
                for vid in plot_ids}

    jobs = []
    for cname in sorted(cfg.clusters, key=lambda c: CLUSTER_PERCENTS[c]):
        cluster = [by_id[i] for i in sorted(clusters.get(cname))]
        for model in cfg.run_models:
            jobs.append((cname, model, cluster))
    ctx = _CellContext(tuple(test), conds, meas, states, coeffs, norm, cfg, tuple(plot_ids))
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_run_cell, [ctx] * len(jobs), *zip(*jobs)))
    else:
        outcomes = [_run_cell(ctx, *job) for job in jobs]

    records: List[EvaluationRecord] = []
    failures = []
    for (cname, model, _), (cell, plotted, error) in zip(jobs, outcomes):
        if error is not None:
            logger.error("cluster %s, model %s failed: %s", cname, model, error)
            failures.append((cname, model, error))
            continue
        records.extend(cell)
        if cname == cfg.plot_cluster:
            for vid, sog in plotted.items():
                profiles[vid][model] = sog
    return ExperimentResult(records, [v.id for v in train], test_ids, clusters, coeffs, norm, profiles, failures)


# -- tables -------------------------------------------------------------------

@dataclass(frozen=True)
class GainCell:
    cluster: str
    model: str
    mean_gain_pct: float
    improved_count: float
    test_count: int


@dataclass(frozen=True)
class GainTable:
    cells: Tuple[GainCell, ...]
    averages: Tuple[GainCell, ...]

    def cell(self, cluster: str, model: str) -> GainCell:
        for c in self.cells + self.averages:
            if c.cluster == cluster and c.model == model:
                return c
        raise KeyError((cluster, model))


def _model_order(models):
    return sorted(set(models), key=lambda m: (MODELS + (IDENTITY,)).index(m) if m in MODELS + (IDENTITY,) else 99)


def gain_table(records: Sequence[EvaluationRecord]) -> GainTable:
    """Mean gain and improved-voyage count per (cluster, model) plus per-model averages.

    Undefined gains are left out of the means; improved means gain > 0.
    """
    groups: Dict[Tuple[str, str], list] = {}
    for r in records:
        groups.setdefault((r.cluster, r.model), []).append(r)
    cells = []
    for cname in sorted({c for c, _ in groups}, key=lambda c: CLUSTER_PERCENTS.get(c, 999)):
        for model in _model_order(m for c, m in groups if c == cname):
            rs = groups.get((cname, model))
            if not rs:
                continue
            gains = [r.gain_pct for r in rs if r.gain_pct is not None]
            mean = float(np.mean(gains)) if gains else math.nan
            cells.append(GainCell(cname, model, mean, sum(g > 0 for g in gains), len(rs)))
    averages = []
    for model in _model_order(c.model for c in cells):
        mine = [c for c in cells if c.model == model]
        averages.append(GainCell("Average", model, float(np.mean([c.mean_gain_pct for c in mine])),
                                 float(np.mean([c.improved_count for c in mine])),
                                 int(round(np.mean([c.test_count for c in mine])))))
    return GainTable(tuple(cells), tuple(averages))


@dataclass(frozen=True)
class BreakdownCell:
    model: str
    state: WeatherState
    mean_gain_pct: Optional[float]
    std_gain_pct: Optional[float]
    n_voyages: int

    @property
    def absent(self) -> bool:
        return self.n_voyages == 0


@dataclass(frozen=True)
class WeatherBreakdownTable:
    cells: Tuple[BreakdownCell, ...]

    def cell(self, model: str, state: WeatherState) -> BreakdownCell:
        for c in self.cells:
            if c.model == model and c.state == state:
                return c
        raise KeyError((model, state))


def weather_breakdown(records: Sequence[EvaluationRecord]) -> WeatherBreakdownTable:
    """Mean and population std of gains per (model, weather state), pooled over clusters."""
    cells = []
    for model in _model_order(r.model for r in records):
        for state in WEATHER_STATES:
            gains = [r.gain_pct for r in records
                     if r.model == model and r.weather_state == state and r.gain_pct is not None]
            if gains:
                cells.append(BreakdownCell(model, state, float(np.mean(gains)), float(np.std(gains)), len(gains)))
            else:
                cells.append(BreakdownCell(model, state, None, None, 0))
    return WeatherBreakdownTable(tuple(cells))
