"""Builders shared by the test modules."""

from __future__ import annotations

import functools
import math
from pathlib import Path

import numpy as np

from voyopt.core import Direction, Record, Voyage
from voyopt.pipeline import build_voyages
from voyopt.synth import SynthConfig, default_route, generate_voyages
from voyopt.weather import attach_weather


def make_voyage(vid="V0000", lat=None, lon=None, t=None, sog=None, fuel=None, direction=Direction.NORTHBOUND,
                modes=None, **weather):
    """Voyage from per-record arrays; missing columns get harmless defaults."""
    n = len(lat)
    lon = np.full(n, 11.9) if lon is None else np.asarray(lon, dtype=float)
    t = 60.0 * np.arange(n) if t is None else np.asarray(t, dtype=float)
    sog = np.full(n, 4.0) if sog is None else np.asarray(sog, dtype=float)
    fuel = np.full(n, 100.0) if fuel is None else np.asarray(fuel, dtype=float)
    cols = {k: np.broadcast_to(np.asarray(v, dtype=float), (n,)) for k, v in weather.items()}
    recs = []
    for i in range(n):
        extra = {k: float(v[i]) for k, v in cols.items()}
        recs.append(Record(float(t[i]), float(lat[i]), float(lon[i]), float(sog[i]), 0.0, float(fuel[i]),
                           voyage_id=vid, speed_mode=None if modes is None else modes[i], **extra))
    return Voyage(vid, direction, recs)


@functools.lru_cache(maxsize=None)
def world(n_voyages=24, seed=7, **overrides):
    """Fused voyages and corpus of a small synthetic run (cached per argument set)."""
    cfg = SynthConfig(n_voyages=n_voyages, seed=seed, **overrides)
    corpus = generate_voyages(cfg)
    voyages, route = build_voyages(corpus.records, default_route(cfg))
    return tuple(attach_weather(v, corpus.grids) for v in voyages), corpus, route


def dtw_naive(a, b):
    """Exponential recursion straight from the DP definition."""
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        c = abs(a[i] - b[j])
        if i == 0 and j == 0:
            return c
        opts = []
        if i > 0:
            opts.append(d(i - 1, j))
        if j > 0:
            opts.append(d(i, j - 1))
        if i > 0 and j > 0:
            opts.append(d(i - 1, j - 1))
        return c + min(opts)

    return d(len(a) - 1, len(b) - 1)


def dtw_paths(a, b):
    """Minimum over every monotone warping path, enumerated without memoization."""
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        acc += abs(a[i] - b[j])
        if i == len(a) - 1 and j == len(b) - 1:
            best = min(best, acc)
            return
        if i + 1 < len(a):
            walk(i + 1, j, acc)
        if j + 1 < len(b):
            walk(i, j + 1, acc)
        if i + 1 < len(a) and j + 1 < len(b):
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0)
    return best


def random_hmm(rng, n_states=3, dim=2):
    """Random valid Gaussian HMM with distinct wave means."""
    from voyopt.models.hmm import HmmModel

    pi = rng.dirichlet(np.ones(n_states))
    A = rng.dirichlet(np.ones(n_states), size=n_states)
    means = np.sort(rng.uniform(0.0, 4.0, (n_states, dim)), axis=0)
    variances = rng.uniform(0.2, 1.5, (n_states, dim))
    return HmmModel(pi, A, means, variances)


def sample_hmm(m, rng, length):
    """States and observations drawn from ``m``."""
    states = np.empty(length, dtype=int)
    states[0] = rng.choice(m.n_states, p=m.pi)
    for t in range(1, length):
        states[t] = rng.choice(m.n_states, p=m.A[states[t - 1]])
    obs = m.means[states] + rng.normal(size=(length, m.means.shape[1])) * np.sqrt(m.variances[states])
    return states, obs


def gauss_logpdf(x, mean, var):
    return float(np.sum(-0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)))


def hmm_enumerate(m, obs):
    """Total log-likelihood and the best path by brute force over all state paths."""
    import itertools

    T = len(obs)
    logs, paths = [], []
    for path in itertools.product(range(m.n_states), repeat=T):
        lp = math.log(m.pi[path[0]]) if m.pi[path[0]] > 0 else -math.inf
        lp += gauss_logpdf(obs[0], m.means[path[0]], m.variances[path[0]])
        for t in range(1, T):
            a = m.A[path[t - 1], path[t]]
            lp += (math.log(a) if a > 0 else -math.inf) + gauss_logpdf(obs[t], m.means[path[t]], m.variances[path[t]])
        logs.append(lp)
        paths.append(path)
    logs = np.array(logs)
    top = logs.max()
    total = top + math.log(np.exp(logs - top).sum())
    best = paths[int(np.argmax(logs))]  # first maximum in lexicographic order
    return total, np.array(best), top


def lstm_gradcheck(seed=0, input_dim=3, hidden_dim=2, steps=5, eps=1e-5):
    """Max relative error between BPTT gradients and central differences."""
    from voyopt.models.lstm import LstmConfig, LstmParams, init_lstm, loss_and_grad

    rng = np.random.default_rng(seed)
    p = init_lstm(LstmConfig(input_dim=input_dim, hidden_dim=hidden_dim, seed=seed))
    X = rng.normal(size=(steps, input_dim))
    y = rng.normal(size=steps)
    _, g = loss_and_grad(p, X, y)
    flat, analytic = p.flat(), g.flat()
    worst = 0.0
    for k in range(flat.size):
        hi, lo = flat.copy(), flat.copy()
        hi[k] += eps
        lo[k] -= eps
        f_hi = loss_and_grad(LstmParams.from_flat(hi, input_dim, hidden_dim), X, y)[0]
        f_lo = loss_and_grad(LstmParams.from_flat(lo, input_dim, hidden_dim), X, y)[0]
        num = (f_hi - f_lo) / (2 * eps)
        worst = max(worst, abs(num - analytic[k]) / max(abs(num) + abs(analytic[k]), 1e-8))
    return worst


def knn_oracle(X, y, q, k):
    """Exhaustive scan: sort every row by (squared distance, row index), average the first k."""
    rows = []
    for idx, row in enumerate(X):
        d2 = 0.0
        for a, b in zip(row, q):
            d2 += (float(a) - float(b)) ** 2
        rows.append((d2, idx))
    rows.sort()
    return math.fsum(float(y[idx]) for _, idx in rows[:k]) / k


def with_model_fuel(voyages, coeffs):
    """Copies of ``voyages`` whose fuel_rate is exactly the surrogate model's output."""
    import dataclasses

    from voyopt.efficiency import fuel_rate_model, relative_wind_angle

    out = []
    for v in voyages:
        rel = relative_wind_angle(v.column("wind_dir"), v.column("heading"))
        rate = np.atleast_1d(fuel_rate_model(v.column("sog"), v.column("wave_height"), v.column("wind_speed"),
                                             rel, coeffs))
        recs = [dataclasses.replace(r, fuel_rate=float(x)) for r, x in zip(v.records, rate)]
        out.append(dataclasses.replace(v, records=recs, totals=None, eff_score=None))
    return out


def trilinear_poly(rng):
    """Random coefficients of a + b t + c y + d x + e ty + f tx + g yx + h tyx."""
    co = rng.uniform(-2.0, 2.0, 8)

    def f(t, y, x):
        a, b, c, d, e, f_, g, h = co
        return a + b * t + c * y + d * x + e * t * y + f_ * t * x + g * y * x + h * t * y * x

    return f


def irregular_axis(rng, lo, hi, n):
    inner = np.sort(rng.uniform(lo, hi, n - 2))
    return np.concatenate([[lo], inner, [hi]])


def small_pipeline_config(out_dir, n_voyages=24, seed=42):
    """Reduced config for CLI runs: few voyages, short LSTM training."""
    from voyopt.config import PipelineConfig
    from voyopt.evaluate import ExperimentConfig
    from voyopt.models.lstm import LstmConfig

    return PipelineConfig(
        seed=seed, out_dir=str(out_dir), synth=SynthConfig(n_voyages=n_voyages),
        experiment=ExperimentConfig(lstm=LstmConfig(epochs=3, hidden_dim=4), hmm_starts=2, hmm_max_iter=20),
    )


def write_small_config(path, out_dir, **kw):
    path = Path(path)
    path.write_text(small_pipeline_config(out_dir, **kw).to_json())
    return path
