import math

import numpy as np
import pytest

from helpers import lstm_gradcheck, make_voyage, world
from voyopt.models.features import voyage_features
from voyopt.models.lstm import (
    LstmConfig,
    LstmError,
    LstmParams,
    Standardizer,
    fit_lstm,
    init_lstm,
    lstm_forward,
    lstm_predict,
    load_lstm,
    make_windows,
    save_lstm,
    train_lstm,
)


def sig(x):
    return 1 / (1 + math.exp(-x))


def test_init_deterministic_and_forget_bias():
    cfg = LstmConfig(input_dim=4, hidden_dim=3, seed=9)
    a, b = init_lstm(cfg), init_lstm(cfg)
    assert np.array_equal(a.flat(), b.flat())
    assert np.all(a.b[3:6] == 1.0)
    bound = 1 / math.sqrt(3)
    assert np.all(np.abs(a.W) <= bound)


def test_parameter_tally_one_unit():
    p = init_lstm(LstmConfig(input_dim=5, hidden_dim=1))
    # four gates with (inputs + recurrent + bias) weights each, then head weight and bias
    assert p.size() == 4 * (5 + 1 + 1) + 1 + 1


def test_config_validation():
    with pytest.raises(LstmError):
        LstmConfig(hidden_dim=0)
    with pytest.raises(LstmError):
        LstmConfig(clip_norm=0.0)


def test_dead_network_outputs_head_bias():
    p = LstmParams(np.zeros((8, 5)), np.zeros(8), np.zeros(2), np.array([0.7]))
    y, _ = lstm_forward(p, np.random.default_rng(0).normal(size=(6, 3)))
    assert np.all(y == 0.7)


def test_one_step_by_hand():
    rng = np.random.default_rng(4)
    p = LstmParams(rng.normal(size=(8, 3)), rng.normal(size=8), rng.normal(size=2), np.array([0.1]))
    x = 0.8
    h = []
    for u in range(2):
        z = [p.W[k * 2 + u, 0] * x + p.b[k * 2 + u] for k in range(4)]  # zero initial state
        i, _, g, o = sig(z[0]), sig(z[1]), math.tanh(z[2]), sig(z[3])
        h.append(o * math.tanh(i * g))
    expect = p.Wy[0] * h[0] + p.Wy[1] * h[1] + 0.1
    y, _ = lstm_forward(p, [[x]])
    assert y.shape == (1,) and abs(y[0] - expect) < 1e-14


def test_forward_finite_under_saturation():
    rng = np.random.default_rng(0)
    p = init_lstm(LstmConfig(input_dim=3, hidden_dim=4))
    p.W *= 1e3
    X = rng.normal(scale=1e3, size=(1000, 5, 3))
    y, _ = lstm_forward(p, X)
    assert np.all(np.isfinite(y))


def test_dimension_mismatch():
    p = init_lstm(LstmConfig(input_dim=3, hidden_dim=2))
    with pytest.raises(LstmError):
        lstm_forward(p, np.zeros((4, 2)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check(seed):
    assert lstm_gradcheck(seed) < 1e-4


def test_batched_gradient_is_sum_of_masked_parts():
    from voyopt.models.lstm import loss_and_grad

    rng = np.random.default_rng(3)
    p = init_lstm(LstmConfig(input_dim=2, hidden_dim=3))
    X, Y = rng.normal(size=(2, 4, 2)), rng.normal(size=(2, 4))
    M = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
    loss, g = loss_and_grad(p, X, Y, M)
    l0, g0 = loss_and_grad(p, X[0], Y[0])
    l1, g1 = loss_and_grad(p, X[1, :2], Y[1, :2])
    assert loss == pytest.approx((4 * l0 + 2 * l1) / 6, rel=1e-12)
    assert np.allclose(g.flat(), (4 * g0.flat() + 2 * g1.flat()) / 6, rtol=1e-10, atol=1e-14)


def test_windows_cover_each_step_once():
    seqs = [np.arange(10, dtype=float)[:, None], np.arange(3, dtype=float)[:, None]]
    X, Y, M = make_windows(seqs, [s[:, 0] for s in seqs], 4)
    assert X.shape == (4, 4, 1)
    assert M.sum() == 13
    assert Y[M > 0].tolist() == list(range(10)) + list(range(3))


def test_constant_target_is_learned():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 8, 3))
    Y = np.full((6, 8), 0.5)
    cfg = LstmConfig(input_dim=3, hidden_dim=4, epochs=50, learning_rate=0.05, batch_size=None)
    res = train_lstm(init_lstm(cfg), X, Y, np.ones_like(Y), cfg)
    assert res.losses[-1] < 1e-4


def test_zero_learning_rate_is_a_no_op():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 5))
    cfg = LstmConfig(input_dim=2, hidden_dim=3, epochs=3, learning_rate=0.0)
    p = init_lstm(cfg)
    res = train_lstm(p, X, Y, np.ones_like(Y), cfg)
    assert np.array_equal(res.params.flat(), p.flat())


def test_head_only_training_never_increases_loss():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(4, 6, 2)), rng.normal(size=(4, 6))
    cfg = LstmConfig(input_dim=2, hidden_dim=4, epochs=30, learning_rate=1e-4, batch_size=None)
    res = train_lstm(init_lstm(cfg), X, Y, np.ones_like(Y), cfg, trainable=("Wy", "by"))
    assert all(b <= a + 1e-12 for a, b in zip(res.losses, res.losses[1:]))


def test_training_is_deterministic():
    vs, _, _ = world()
    cfg = LstmConfig(epochs=2, hidden_dim=4)
    a, b = fit_lstm(vs[:4], cfg), fit_lstm(vs[:4], cfg)
    assert np.array_equal(a.params.flat(), b.params.flat())
    assert a.losses == b.losses


def test_memorizes_one_voyage():
    vs, _, _ = world()
    v = vs[0]
    res = fit_lstm([v], LstmConfig(epochs=500, learning_rate=1e-2, hidden_dim=16))
    pred = lstm_predict(res.params, res.standardizer, v, window=res.config.window)
    assert math.sqrt(np.mean((pred.sog - v.column("sog")) ** 2)) < 0.1


def test_predict_is_destandardized_forward():
    vs, _, _ = world()
    res = fit_lstm(vs[:3], LstmConfig(epochs=1, hidden_dim=4))
    st = res.standardizer
    v = vs[5]
    y, _ = lstm_forward(res.params, st.x(voyage_features(v)))
    assert np.array_equal(lstm_predict(res.params, st, v).sog, y * st.y_std + st.y_mean)
    parts = [lstm_forward(res.params, st.x(voyage_features(v))[lo:lo + 8])[0] for lo in range(0, len(v), 8)]
    windowed = np.concatenate(parts) * st.y_std + st.y_mean
    assert np.array_equal(lstm_predict(res.params, st, v, window=8).sog, windowed)


def test_predict_clips_huge_outputs():
    v = make_voyage(lat=np.linspace(57.62, 57.76, 5), wave_height=1.0, wind_speed=5.0, wind_dir=90.0,
                    current_speed=0.1, current_dir=0.0)
    d = voyage_features(v).shape[1]
    p = LstmParams(np.zeros((4, d + 1)), np.zeros(4), np.zeros(1), np.array([1e6]))
    st = Standardizer(np.zeros(d), np.ones(d), 0.0, 1.0)
    assert np.all(lstm_predict(p, st, v, 0.5, 6.0).sog == 6.0)


def test_save_load_round_trip(tmp_path):
    vs, _, _ = world()
    res = fit_lstm(vs[:3], LstmConfig(epochs=1, hidden_dim=4))
    save_lstm(tmp_path / "m.json", res)
    raw = (tmp_path / "m.bin").read_bytes()
    assert len(raw) == 8 * res.params.size()
    back = load_lstm(tmp_path / "m.json")
    assert np.array_equal(back.params.flat(), res.params.flat())
    assert back.config == res.config and back.losses == res.losses
