"""Single-layer LSTM with a linear head, trained by truncated BPTT with Adam.

Gate blocks in the stacked weight matrix are ordered input, forget, cell
candidate, output. Inputs and targets are standardized with constants from
the training cluster; predictions are mapped back to m/s.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from ..core import Provenance, SpeedProfile, Voyage
from .features import FEATURE_NAMES, voyage_features

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W", "b", "Wy", "by")
SCHEMA = "voyopt.lstm/1"


class LstmError(ValueError):
    pass


@dataclass(frozen=True)
class LstmConfig:
    input_dim: int = len(FEATURE_NAMES)
    hidden_dim: int = 16
    window: int = 32
    learning_rate: float = 1e-3
    epochs: int = 50
    clip_norm: float = 1.0
    batch_size: Optional[int] = 8  # windows per update; None = all windows
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.window, self.epochs + 1) < 1:
            raise LstmError("dimensions must be >= 1")
        if not self.clip_norm > 0:
            raise LstmError("clip_norm must be positive")


@dataclass
class LstmParams:
    W: np.ndarray  # (4H, D + H)
    b: np.ndarray  # (4H,)
    Wy: np.ndarray  # (H,)
    by: np.ndarray  # (1,)

    @property
    def hidden_dim(self) -> int:
        return len(self.Wy)

    @property
    def input_dim(self) -> int:
        return self.W.shape[1] - self.hidden_dim

    def arrays(self) -> List[np.ndarray]:
        return [self.W, self.b, self.Wy, self.by]

    def copy(self) -> "LstmParams":
        return LstmParams(*(a.copy() for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    @classmethod
    def from_flat(cls, flat: np.ndarray, input_dim: int, hidden_dim: int) -> "LstmParams":
        H, D = hidden_dim, input_dim
        shapes = [(4 * H, D + H), (4 * H,), (H,), (1,)]
        out, pos = [], 0
        for shape in shapes:
            n = int(np.prod(shape))
            out.append(np.array(flat[pos:pos + n], dtype=float).reshape(shape))
            pos += n
        if pos != len(flat):
            raise LstmError("flat parameter vector has the wrong length")
        return cls(*out)


def init_lstm(cfg: LstmConfig) -> LstmParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) init from the config seed; forget bias 1."""
    H, D = cfg.hidden_dim, cfg.input_dim
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / math.sqrt(H)
    p = LstmParams(
        W=rng.uniform(-bound, bound, (4 * H, D + H)),
        b=rng.uniform(-bound, bound, 4 * H),
        Wy=rng.uniform(-bound, bound, H),
        by=rng.uniform(-bound, bound, 1),
    )
    p.b[H:2 * H] = 1.0
    return p


def _sigmoid(x):
    # split form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(p: LstmParams, X):
    """Run the recurrence from a zero state.

    ``X`` is (T, D) or (B, T, D). Returns outputs of shape (T,) or (B, T) and
    a cache for :func:`lstm_backward`.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    B, T, D = X.shape
    if D != p.input_dim:
        raise LstmError(f"input has {D} features, model expects {p.input_dim}")
    H = p.hidden_dim
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = {"X": X, "xh": [], "i": [], "f": [], "g": [], "o": [], "c": [], "tc": [], "h": []}
    for t in range(T):
        xh = np.concatenate([X[:, t], h], axis=1)
        z = xh @ p.W.T + p.b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        for key, val in (("xh", xh), ("i", i), ("f", f), ("g", g), ("o", o), ("c", c), ("tc", tc), ("h", h)):
            cache[key].append(val)
    Hs = np.stack(cache["h"], axis=1)  # (B, T, H)
    y = Hs @ p.Wy + p.by[0]
    return (y[0] if single else y), cache


def lstm_backward(p: LstmParams, cache, dy: np.ndarray) -> LstmParams:
    """Gradients of a loss with respect to every parameter given dL/dy of shape (B, T)."""
    dy = np.asarray(dy, dtype=float)
    if dy.ndim == 1:
        dy = dy[None]
    B, T = dy.shape
    H = p.hidden_dim
    gW = np.zeros_like(p.W)
    gb = np.zeros_like(p.b)
    Hs = np.stack(cache["h"], axis=1)
    gWy = np.einsum("bt,bth->h", dy, Hs)
    gby = np.array([dy.sum()])
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o = cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t]
        tc = cache["tc"][t]
        c_prev = cache["c"][t - 1] if t else np.zeros((B, H))
        dh = dy[:, t, None] * p.Wy + dh_next
        do = dh * tc
        dc = dh * o * (1 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
        gW += dz.T @ cache["xh"][t]
        gb += dz.sum(axis=0)
        dxh = dz @ p.W
        dh_next = dxh[:, p.input_dim:]
        dc_next = dc * f
    return LstmParams(gW, gb, gWy, gby)


def masked_mse(y: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Mean squared error over unmasked steps and its gradient w.r.t. ``y``."""
    n = mask.sum()
    diff = (y - target) * mask
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def loss_and_grad(p: LstmParams, X, target, mask=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X, target = X[None], np.asarray(target)[None]
        mask = None if mask is None else np.asarray(mask)[None]
    mask = np.ones(target.shape) if mask is None else np.asarray(mask, dtype=float)
    y, cache = lstm_forward(p, X)
    loss, dy = masked_mse(y, target, mask)
    return loss, lstm_backward(p, cache, dy)


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, F: np.ndarray, y: np.ndarray) -> "Standardizer":
        # constant columns get unit scale; their float std can be ~1e-16 instead of 0
        sd = np.where(np.ptp(F, axis=0) > 0, F.std(axis=0), 1.0)
        ysd = float(y.std()) if np.ptp(y) > 0 else 1.0
        return cls(F.mean(axis=0), sd, float(y.mean()), ysd)

    def x(self, F):
        return (np.asarray(F) - self.x_mean) / self.x_std


def make_windows(seqs: Sequence[np.ndarray], targets: Sequence[np.ndarray], window: int):
    """Cut sequences into non-overlapping windows, zero-padding the tail window."""
    Xs, Ys, Ms = [], [], []
    for F, y in zip(seqs, targets):
        for start in range(0, len(y), window):
            n = min(window, len(y) - start)
            Xw = np.zeros((window, F.shape[1]))
            Yw = np.zeros(window)
            Mw = np.zeros(window)
            Xw[:n], Yw[:n], Mw[:n] = F[start:start + n], y[start:start + n], 1.0
            Xs.append(Xw)
            Ys.append(Yw)
            Ms.append(Mw)
    if not Xs:
        raise LstmError("no training windows")
    return np.stack(Xs), np.stack(Ys), np.stack(Ms)


@dataclass
class TrainResult:
    params: LstmParams
    losses: List[float]
    standardizer: Optional[Standardizer] = None
    config: Optional[LstmConfig] = None


def train_lstm(p: LstmParams, X: np.ndarray, Y: np.ndarray, M: np.ndarray, cfg: LstmConfig,
               trainable: Sequence[str] = PARAM_NAMES) -> TrainResult:
    """Adam on masked MSE over fixed-order windows.

    ``X`` (N, T, D), ``Y`` and ``M`` (N, T) are already standardized windows.
    The recorded loss per epoch is the full-data loss after that epoch.
    """
    p = p.copy()
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    names = [n for n in PARAM_NAMES if n in trainable]
    m1 = {n: np.zeros_like(getattr(p, n)) for n in names}
    m2 = {n: np.zeros_like(getattr(p, n)) for n in names}
    bs = len(X) if cfg.batch_size is None else cfg.batch_size
    step = 0
    losses = []
    for epoch in range(cfg.epochs):
        for lo in range(0, len(X), bs):
            sl = slice(lo, lo + bs)
            if M[sl].sum() == 0:
                continue
            loss, grads = loss_and_grad(p, X[sl], Y[sl], M[sl])
            if not math.isfinite(loss):
                raise LstmError(f"non-finite loss at epoch {epoch}, batch starting at window {lo}")
            g = {n: getattr(grads, n) for n in names}
            norm = math.sqrt(sum(float(np.sum(a * a)) for a in g.values()))
            if norm > cfg.clip_norm:
                g = {n: a * (cfg.clip_norm / norm) for n, a in g.items()}
            step += 1
            for n in names:
                m1[n] = beta1 * m1[n] + (1 - beta1) * g[n]
                m2[n] = beta2 * m2[n] + (1 - beta2) * g[n] * g[n]
                mhat = m1[n] / (1 - beta1 ** step)
                vhat = m2[n] / (1 - beta2 ** step)
                setattr(p, n, getattr(p, n) - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps))
        y, _ = lstm_forward(p, X)
        losses.append(masked_mse(y, Y, M)[0])
        if not math.isfinite(losses[-1]):
            raise LstmError(f"non-finite loss after epoch {epoch}")
    return TrainResult(p, losses, config=cfg)


def fit_lstm(voyages: Sequence[Voyage], cfg: LstmConfig) -> TrainResult:
    """Standardize a cluster's features and SOG, window them and train from a fresh init."""
    if not voyages:
        raise LstmError("empty cluster")
    feats = [voyage_features(v) for v in voyages]
    sogs = [np.asarray(v.column("sog")) for v in voyages]
    st = Standardizer.fit(np.concatenate(feats), np.concatenate(sogs))
    X, Y, M = make_windows([st.x(F) for F in feats], [(y - st.y_mean) / st.y_std for y in sogs], cfg.window)
    result = train_lstm(init_lstm(replace(cfg, input_dim=X.shape[2])), X, Y, M, cfg)
    result.standardizer = st
    return result


def lstm_predict(p: LstmParams, st: Standardizer, v: Voyage, sog_min: float = 0.0,
                 sog_max: float = np.inf, window: Optional[int] = None) -> SpeedProfile:
    """Forward pass over the whole voyage, de-standardized and clipped.

    With ``window`` set, the state is reset every ``window`` steps exactly as
    in training, so inference sees the same contexts the net was fitted on.
    """
    F = st.x(voyage_features(v))
    step = len(F) if window is None else window
    y = np.concatenate([lstm_forward(p, F[lo:lo + step])[0] for lo in range(0, len(F), step)])
    sog = np.clip(y * st.y_std + st.y_mean, sog_min, sog_max)
    return SpeedProfile(v.id, v.positions, sog, Provenance.PREDICTED, model="LSTM")


def save_lstm(path: Union[str, Path], result: TrainResult) -> None:
    """``<path>.bin`` holds little-endian float64 parameters; ``<path>.json`` the rest."""
    from ..util import atomic_write_bytes, atomic_write_text

    path = Path(path)
    p, st = result.params, result.standardizer
    atomic_write_bytes(path.with_suffix(".bin"), p.flat().astype("<f8").tobytes())
    doc = {
        "schema": SCHEMA,
        "shapes": {n: list(getattr(p, n).shape) for n in PARAM_NAMES},
        "input_dim": p.input_dim, "hidden_dim": p.hidden_dim,
        "config": asdict(result.config) if result.config else None,
        "standardizer": None if st is None else {
            "x_mean": st.x_mean.tolist(), "x_std": st.x_std.tolist(), "y_mean": st.y_mean, "y_std": st.y_std},
        "losses": result.losses,
    }
    atomic_write_text(path.with_suffix(".json"), json.dumps(doc, indent=2) + "\n")


def load_lstm(path: Union[str, Path]) -> TrainResult:
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    if doc.get("schema") != SCHEMA:
        raise LstmError(f"{path}: unsupported schema")
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    p = LstmParams.from_flat(flat, doc["input_dim"], doc["hidden_dim"])
    s = doc["standardizer"]
    st = None if s is None else Standardizer(np.array(s["x_mean"]), np.array(s["x_std"]), s["y_mean"], s["y_std"])
    cfg = LstmConfig(**doc["config"]) if doc["config"] else None
    return TrainResult(p, doc["losses"], st, cfg)
