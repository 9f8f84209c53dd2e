"""Three-state Gaussian HMM over weather and the state-conditional speed policy.

Observations are (wave_height, wind_speed) pairs with diagonal Gaussian
emissions. States are ordered by ascending mean wave height, so index 0/1/2
reads as Calm/Moderate/Rough. The speed policy picks, per along-track bin,
the maximum observed cruising speed in calm weather, the mean in moderate
weather and the minimum in rough weather.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from ..core import WEATHER_STATES, Provenance, SpeedProfile, Voyage
from .features import cruising_mask

logger = logging.getLogger(__name__)

N_STATES = 3
VAR_FLOOR = 1e-6
SCHEMA = "voyopt.hmm/1"


class HmmError(ValueError):
    pass


@dataclass(frozen=True)
class HmmModel:
    pi: np.ndarray  # (S,)
    A: np.ndarray  # (S, S), rows sum to one
    means: np.ndarray  # (S, D)
    variances: np.ndarray  # (S, D)
    loglik: float = math.nan
    degenerate: bool = False

    def __post_init__(self):
        for name in ("pi", "A", "means", "variances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if abs(self.pi.sum() - 1) > 1e-9 or np.any(np.abs(self.A.sum(axis=1) - 1) > 1e-9):
            raise HmmError("pi and the rows of A must be probability vectors")
        if np.any(self.variances < VAR_FLOOR * (1 - 1e-12)):
            raise HmmError("emission variances below floor")

    @property
    def n_states(self) -> int:
        return len(self.pi)


def weather_observations(v: Voyage) -> np.ndarray:
    return np.column_stack([v.column("wave_height"), v.column("wind_speed")])


def _log_emissions(m: HmmModel, X: np.ndarray) -> np.ndarray:
    """log N(x; mu_s, diag var_s) for X of shape (..., D) -> (..., S)."""
    diff = X[..., None, :] - m.means
    return -0.5 * np.sum(np.log(2 * np.pi * m.variances) + diff * diff / m.variances, axis=-1)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def forward_loglik(m: HmmModel, obs) -> float:
    """Log-likelihood of one sequence by the scaled forward recursion."""
    obs = np.asarray(obs, dtype=float).reshape(len(obs), -1)
    logb = _log_emissions(m, obs)
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    alpha = m.pi * b[0]
    total = 0.0
    for t in range(len(obs)):
        if t:
            alpha = (alpha @ m.A) * b[t]
        c = alpha.sum()
        if c <= 0:
            return -math.inf
        alpha = alpha / c
        total += math.log(c) + shift[t]
    return total


def viterbi(m: HmmModel, obs) -> np.ndarray:
    """Most probable state path; exact ties resolve toward the lower state index."""
    obs = np.asarray(obs, dtype=float).reshape(len(obs), -1)
    logb = _log_emissions(m, obs)
    logA = _log(m.A)
    delta = _log(m.pi) + logb[0]
    back = np.zeros((len(obs), m.n_states), dtype=int)
    for t in range(1, len(obs)):
        cand = delta[:, None] + logA
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(m.n_states)] + logb[t]
    path = np.empty(len(obs), dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(len(obs) - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_log_prob(m: HmmModel, obs, path) -> float:
    """Joint log-probability of observations and a state path."""
    obs = np.asarray(obs, dtype=float).reshape(len(obs), -1)
    logb = _log_emissions(m, obs)
    logA = _log(m.A)
    score = _log(m.pi)[path[0]] + logb[0, path[0]]
    for t in range(1, len(obs)):
        score = score + logA[path[t - 1], path[t]] + logb[t, path[t]]
    return float(score)


# -- Baum-Welch ---------------------------------------------------------------

def _pad(sequences: Sequence[np.ndarray]):
    lengths = np.array([len(s) for s in sequences])
    D = sequences[0].shape[1]
    X = np.zeros((len(sequences), lengths.max(), D))
    for n, s in enumerate(sequences):
        X[n, :len(s)] = s
    mask = np.arange(lengths.max())[None, :] < lengths[:, None]
    return X, mask


def _e_step(m: HmmModel, X: np.ndarray, mask: np.ndarray):
    N, T, _ = X.shape
    S = m.n_states
    logb = _log_emissions(m, X)
    shift = np.where(mask, logb.max(axis=2), 0.0)
    b = np.where(mask[..., None], np.exp(logb - shift[..., None]), 1.0)

    alpha = np.empty((N, T, S))
    c = np.ones((N, T))
    a = m.pi * b[:, 0]
    c[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / c[:, 0, None]
    for t in range(1, T):
        a = (alpha[:, t - 1] @ m.A) * b[:, t]
        ct = a.sum(axis=1)
        valid = mask[:, t]
        c[:, t] = np.where(valid, ct, 1.0)
        alpha[:, t] = np.where(valid[:, None], a / np.where(valid, ct, 1.0)[:, None], alpha[:, t - 1])
    loglik = float(np.sum(np.where(mask, np.log(c) + shift, 0.0)))

    beta = np.ones((N, T, S))
    for t in range(T - 2, -1, -1):
        nb = ((b[:, t + 1] * beta[:, t + 1]) @ m.A.T) / c[:, t + 1, None]
        beta[:, t] = np.where(mask[:, t + 1, None], nb, 1.0)

    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    gamma *= mask[..., None]
    w = (b[:, 1:] * beta[:, 1:]) / c[:, 1:, None] * mask[:, 1:, None]
    xi = m.A * np.einsum("nti,ntj->ij", alpha[:, :-1], w)
    return loglik, gamma, xi


def _m_step(m: HmmModel, X: np.ndarray, gamma: np.ndarray, xi: np.ndarray, loglik: float) -> HmmModel:
    pi = gamma[:, 0].sum(axis=0)
    pi /= pi.sum()
    rows = xi.sum(axis=1, keepdims=True)
    A = np.where(rows > 0, xi / np.where(rows > 0, rows, 1.0), m.A)
    weight = gamma.sum(axis=(0, 1))
    means = m.means.copy()
    variances = m.variances.copy()
    for s in range(m.n_states):
        if weight[s] <= 0:
            continue
        g = gamma[..., s][..., None]
        means[s] = (g * X).sum(axis=(0, 1)) / weight[s]
        diff = X - means[s]
        variances[s] = np.maximum((g * diff * diff).sum(axis=(0, 1)) / weight[s], VAR_FLOOR)
    return HmmModel(pi, A, means, variances, loglik, m.degenerate)


def baum_welch(sequences: Sequence[np.ndarray], init: HmmModel, max_iter: int = 50,
               tol: float = 1e-6):
    """EM from ``init``. Returns the fitted model and the log-likelihood trace.

    ``trace[i]`` is the likelihood of the parameters entering iteration i; the
    last entry is that of the returned model.
    """
    X, mask = _pad([np.asarray(s, dtype=float) for s in sequences])
    m = init
    trace: List[float] = []
    for _ in range(max_iter):
        loglik, gamma, xi = _e_step(m, X, mask)
        if trace and loglik - trace[-1] < tol:
            trace.append(loglik)
            return HmmModel(m.pi, m.A, m.means, m.variances, loglik, m.degenerate), trace
        trace.append(loglik)
        m = _m_step(m, X, gamma, xi, loglik)
    loglik = _e_step(m, X, mask)[0]
    trace.append(loglik)
    return HmmModel(m.pi, m.A, m.means, m.variances, loglik, m.degenerate), trace


def _tercile_init(obs: np.ndarray, n_states: int, rng: Optional[np.random.Generator]) -> HmmModel:
    order = np.argsort(obs[:, 0], kind="stable")
    groups = np.array_split(order, n_states)
    means = np.array([obs[g].mean(axis=0) for g in groups])
    variances = np.array([np.maximum(obs[g].var(axis=0), VAR_FLOOR) for g in groups])
    if rng is not None:
        means = means + rng.normal(0.0, 0.25, size=means.shape) * np.sqrt(obs.var(axis=0) + VAR_FLOOR)
    A = np.full((n_states, n_states), 0.1 / max(n_states - 1, 1))
    np.fill_diagonal(A, 0.9 if n_states > 1 else 1.0)
    return HmmModel(np.full(n_states, 1.0 / n_states), A, means, variances)


def relabel_by_wave(m: HmmModel) -> HmmModel:
    order = np.argsort(m.means[:, 0], kind="stable")
    return HmmModel(m.pi[order], m.A[np.ix_(order, order)], m.means[order], m.variances[order],
                    m.loglik, m.degenerate)


def fit_hmm(sequences: Sequence[np.ndarray], seed: int = 0, max_iter: int = 50, tol: float = 1e-6,
            n_starts: int = 5, n_states: int = N_STATES, min_sequences: int = 3) -> HmmModel:
    """Best-of-``n_starts`` Baum-Welch fit, states relabelled by wave height.

    The first start is the plain wave-height tercile initialisation; later
    starts jitter its means with a seeded generator.
    """
    seqs = [np.asarray(s, dtype=float).reshape(len(s), -1) for s in sequences]
    if len(seqs) < min_sequences or any(len(s) < 3 for s in seqs):
        raise HmmError(f"need >= {min_sequences} sequences of length >= 3")
    obs = np.concatenate(seqs)
    if np.all(obs == obs[0]):
        logger.warning("all HMM observations identical; returning variance-floor model")
        A = np.full((n_states, n_states), 1.0 / n_states)
        return HmmModel(np.full(n_states, 1.0 / n_states), A, np.tile(obs[0], (n_states, 1)),
                        np.full((n_states, obs.shape[1]), VAR_FLOOR), degenerate=True)
    rng = np.random.default_rng(seed)
    best = None
    for start in range(n_starts):
        init = _tercile_init(obs, n_states, rng if start else None)
        model, _ = baum_welch(seqs, init, max_iter, tol)
        if best is None or model.loglik > best.loglik:
            best = model
    return relabel_by_wave(best)


# -- speed policy -------------------------------------------------------------

@dataclass(frozen=True)
class SpeedPolicy:
    """Per (along-track bin, weather state) SOG statistics of a cluster."""

    bins: int
    min_sog: np.ndarray  # (bins, S), NaN where unsupported
    mean_sog: np.ndarray
    max_sog: np.ndarray
    support: np.ndarray  # (bins, S) counts
    fallback: np.ndarray  # (S,) rule statistic per state over the whole cluster

    def bin_of(self, positions) -> np.ndarray:
        return np.minimum((np.asarray(positions) * self.bins).astype(int), self.bins - 1)

    def table(self) -> np.ndarray:
        """(bins, S) array of the value each cell emits."""
        rule = np.column_stack([self.max_sog[:, 0], self.mean_sog[:, 1], self.min_sog[:, 2]])
        return np.where(self.support > 0, rule, self.fallback[None, :])

    def lookup(self, positions, states) -> np.ndarray:
        return self.table()[self.bin_of(positions), np.asarray(states, dtype=int)]


_RULES = (np.max, np.mean, np.min)  # calm, moderate, rough


def build_speed_policy(voyages: Sequence[Voyage], m: HmmModel, bins: int = 20) -> SpeedPolicy:
    """Decode each voyage's weather and tabulate its cruising speeds by (bin, state)."""
    if not voyages:
        raise HmmError("empty cluster")
    if bins < 1:
        raise HmmError("bins must be >= 1")
    S = m.n_states
    cells = [[[] for _ in range(S)] for _ in range(bins)]
    per_state: List[list] = [[] for _ in range(S)]
    everything = []
    for v in voyages:
        states = viterbi(m, weather_observations(v))
        mask = cruising_mask(v)
        sog = v.column("sog")
        b = np.minimum((v.positions * bins).astype(int), bins - 1)
        for t in np.flatnonzero(mask):
            cells[b[t]][states[t]].append(sog[t])
            per_state[states[t]].append(sog[t])
            everything.append(sog[t])
    if not everything:
        everything = list(np.concatenate([v.column("sog") for v in voyages]))
    shape = (bins, S)
    lo, mid, hi = np.full(shape, np.nan), np.full(shape, np.nan), np.full(shape, np.nan)
    support = np.zeros(shape, dtype=int)
    for i in range(bins):
        for s in range(S):
            vals = cells[i][s]
            if vals:
                arr = np.array(vals)
                lo[i, s], mid[i, s], hi[i, s] = arr.min(), arr.mean(), arr.max()
                support[i, s] = arr.size
    fallback = np.array([
        float(_RULES[s](per_state[s] if per_state[s] else everything)) for s in range(S)
    ])
    return SpeedPolicy(bins, lo, mid, hi, support, fallback)


def hmm_predict(m: HmmModel, policy: SpeedPolicy, v: Voyage, sog_min: float = 0.0,
                sog_max: float = np.inf) -> SpeedProfile:
    states = viterbi(m, weather_observations(v))
    sog = np.clip(policy.lookup(v.positions, states), sog_min, sog_max)
    return SpeedProfile(v.id, v.positions, sog, Provenance.PREDICTED, model="HMM",
                        meta={"states": [WEATHER_STATES[s].value for s in states]})


def save_hmm(path: Union[str, Path], m: HmmModel, policy: Optional[SpeedPolicy] = None) -> None:
    from ..util import atomic_write_text

    def nan_list(a):
        return [[None if math.isnan(x) else float(x) for x in row] for row in a]

    doc = {"schema": SCHEMA, "pi": m.pi.tolist(), "A": m.A.tolist(), "means": m.means.tolist(),
           "variances": m.variances.tolist(), "loglik": m.loglik, "degenerate": m.degenerate}
    if policy is not None:
        doc["policy"] = {
            "bins": policy.bins, "min_sog": nan_list(policy.min_sog), "mean_sog": nan_list(policy.mean_sog),
            "max_sog": nan_list(policy.max_sog), "support": policy.support.tolist(),
            "fallback": policy.fallback.tolist(),
        }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_hmm(path: Union[str, Path]):
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SCHEMA:
        raise HmmError(f"{path}: unsupported schema")
    m = HmmModel(doc["pi"], doc["A"], doc["means"], doc["variances"], doc["loglik"], doc["degenerate"])
    policy = None
    if "policy" in doc:
        p = doc["policy"]

        def arr(x):
            return np.array([[np.nan if y is None else y for y in row] for row in x], dtype=float)

        policy = SpeedPolicy(p["bins"], arr(p["min_sog"]), arr(p["mean_sog"]), arr(p["max_sog"]),
                             np.array(p["support"], dtype=int), np.array(p["fallback"]))
    return m, policy
