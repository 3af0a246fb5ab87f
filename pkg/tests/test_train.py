import io

import numpy as np
import pytest

from conftest import tiny_sim
from svcforecast.data import make_supervised, split, window_events
from svcforecast.errors import ConfigError, DivergenceError, UsageError
from svcforecast.model import ModelConfig, init_params
from svcforecast.simgen import run
from svcforecast.train import AdamState, TrainConfig, adam_step, clip_by_global_norm, global_norm, train_loop

SMALL = ModelConfig(gcn_hidden=8, gru_hidden=8, mlp_layers=(8, 1), seed=1)


@pytest.fixture(scope="module")
def parts():
    sim = run(tiny_sim())
    seq = make_supervised(window_events(sim.events, sim.calls, 60), 1, 60)
    return split(seq, 0.6, 0.2)


def scalar(v):
    return {"w": np.array([v], dtype=float)}


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    cfg = TrainConfig()
    p = scalar(1.5)
    state = AdamState({"w": np.array([0.4])}, {"w": np.array([0.09])})
    new, st = adam_step(p, scalar(0.0), state, cfg, 3)
    assert st.m["w"][0] == pytest.approx(0.9 * 0.4)
    assert st.v["w"][0] == pytest.approx(0.999 * 0.09)
    zero_state = AdamState.zeros_like(p)
    new, _ = adam_step(p, scalar(0.0), zero_state, cfg, 1)
    assert new["w"][0] == 1.5


@pytest.mark.parametrize("g", [0.003, -2.0, 150.0])
def test_adam_first_step_moves_by_learning_rate(g):
    cfg = TrainConfig(learning_rate=0.01)
    new, _ = adam_step(scalar(0.0), scalar(g), AdamState.zeros_like(scalar(0.0)), cfg, 1)
    expected = -0.01 * g / (abs(g) + cfg.adam_eps)
    assert new["w"][0] == pytest.approx(expected, rel=1e-12)
    assert abs(new["w"][0]) == pytest.approx(0.01, rel=1e-5)


def test_adam_constant_gradient_keeps_direction():
    cfg = TrainConfig(learning_rate=0.1)
    p, st = scalar(0.0), AdamState.zeros_like(scalar(0.0))
    p1, st = adam_step(p, scalar(0.5), st, cfg, 1)
    p2, _ = adam_step(p1, scalar(0.5), st, cfg, 2)
    assert (p1["w"][0] - p["w"][0]) < 0 and (p2["w"][0] - p1["w"][0]) < 0


def test_adam_rejects_bad_structure():
    with pytest.raises(UsageError):
        adam_step(scalar(0.0), {"v": np.zeros(1)}, AdamState.zeros_like(scalar(0.0)), TrainConfig(), 1)
    with pytest.raises(UsageError):
        adam_step(scalar(0.0), scalar(1.0), AdamState.zeros_like(scalar(0.0)), TrainConfig(), 0)


def test_global_norm_clipping():
    g = {"a": np.array([3.0]), "b": np.array([[4.0]])}
    assert global_norm(g) == 5.0
    c = clip_by_global_norm(g, 1.0)
    assert global_norm(c) == pytest.approx(1.0)
    assert clip_by_global_norm(g, 10.0) is g
    assert clip_by_global_norm(g, None) is g


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(grad_clip_norm=-1)


def test_zero_epochs_returns_initial_params(parts):
    tr, va, _ = parts
    params, history = train_loop(tr, va, SMALL, TrainConfig(epochs=0))
    assert len(history) == 0
    for k, v in init_params(SMALL).items():
        np.testing.assert_array_equal(params[k], v)


def test_training_halves_the_loss(parts):
    tr, va, _ = parts
    _, history = train_loop(tr, va, SMALL, TrainConfig(epochs=200, learning_rate=1e-2, early_stop_patience=200))
    assert history.train_losses[-1] < 0.5 * history.train_losses[0]


def test_same_seed_same_history(parts):
    tr, va, _ = parts
    cfg = TrainConfig(epochs=15, learning_rate=1e-2)
    outs = []
    for _ in range(2):
        params, history = train_loop(tr, va, SMALL, cfg)
        fh = io.StringIO()
        history.write_csv(fh)
        outs.append((fh.getvalue(), params))
    assert outs[0][0] == outs[1][0]
    for k in outs[0][1]:
        np.testing.assert_array_equal(outs[0][1][k], outs[1][1][k])


def test_history_csv_leaves_seconds_blank_by_default(parts):
    tr, va, _ = parts
    _, history = train_loop(tr, va, SMALL, TrainConfig(epochs=2))
    fh = io.StringIO()
    history.write_csv(fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,seconds"
    assert lines[1].endswith(",")
    fh = io.StringIO()
    history.write_csv(fh, timing=True)
    assert not fh.getvalue().splitlines()[1].endswith(",")


def test_best_validation_params_are_returned(parts):
    tr, va, _ = parts
    from svcforecast.evaluation import predict
    from svcforecast.model import mse_loss

    params, history = train_loop(tr, va, SMALL, TrainConfig(epochs=40, learning_rate=5e-2, early_stop_patience=5))
    val = mse_loss(va.targets, predict(params, SMALL, va), va.target_mask)
    assert val == pytest.approx(min(history.val_losses), rel=1e-12)
    assert len(history) <= 40


def test_divergence_reports_epoch(parts):
    tr, va, _ = parts
    bad = {k: np.full_like(v, 1e300) for k, v in init_params(SMALL).items()}
    with pytest.raises(DivergenceError) as info, np.errstate(over="ignore", invalid="ignore"):
        train_loop(tr, va, SMALL, TrainConfig(epochs=3), params=bad)
    assert info.value.epoch == 1


def test_clipped_norm_never_exceeds_bound():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = {"a": rng.normal(0, 100, (3, 4)), "b": rng.normal(0, 100, 5)}
        c = float(rng.uniform(0.01, 50))
        assert global_norm(clip_by_global_norm(g, c)) <= c + 1e-9
