from __future__ import annotations

import numpy as np
import pytest

from svcforecast.model import ModelConfig, ModelInputs, init_params
from svcforecast.simgen import SimConfig, sine_profile


def random_operator(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
    a = a + a.T
    np.fill_diagonal(a, 0.0)
    a_hat = a + np.eye(n)
    d = a_hat.sum(1)
    return a_hat / np.sqrt(np.outer(d, d))


def small_instance(seed: int, activation: str = "relu"):
    """Random model, inputs and masked targets with N <= 5, T <= 4 and widths <= 8.

    Every parameter, biases included, is perturbed away from its Glorot/zero
    init so no pre-activation sits exactly on the relu kink.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    T = int(rng.integers(1, 5))
    cfg = ModelConfig(
        in_features=3,
        gcn_layers=int(rng.integers(1, 3)),
        gcn_hidden=int(rng.integers(2, 9)),
        gcn_activation=activation,
        time_enc_dim=2,
        gru_hidden=int(rng.integers(2, 9)),
        mlp_layers=(int(rng.integers(2, 9)), 1),
        seed=seed,
    )
    params = {k: v + rng.normal(0.0, 0.3, v.shape) for k, v in init_params(cfg).items()}
    S = np.stack([random_operator(rng, n) for _ in range(T)])
    presence = rng.random((T, n)) < 0.8
    presence[0, 0] = True
    X = rng.normal(size=(T, n, cfg.input_width)) * presence[..., None]
    y = rng.normal(size=(T, n))
    return cfg, params, ModelInputs(S, X, presence), y, presence.copy()


def tiny_sim(**overrides) -> SimConfig:
    """A few hours of a 3-node tree: enough windows for a split, fast to train on."""
    base = dict(
        depth=2,
        fanout=2,
        duration_s=7200,
        tick_s=60,
        load_profile=sine_profile(200.0, 4800.0, 3600.0, 7200.0),
        seed=3,
    )
    base.update(overrides)
    return SimConfig(**base)


@pytest.fixture
def tiny_world():
    from svcforecast.simgen import run

    return run(tiny_sim())


def _act(x, fn):
    if fn == "relu":
        return np.maximum(x, 0)
    if fn == "tanh":
        return np.tanh(x)
    if fn == "sigmoid":
        return 1 / (1 + np.exp(-x))
    return x


def reference_loss(inputs: ModelInputs, params: dict, cfg: ModelConfig, y, mask, dtype=np.longdouble):
    """Masked MSE of a straightforward loop re-implementation of the model.

    Written independently of `model_forward` and evaluated in extended
    precision, so central differences of it have ~1e-14 roundoff instead of
    the ~1e-11 a float64 forward pass leaves at epsilon 1e-5.
    """
    p = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
    S = inputs.operators.astype(dtype)
    X = inputs.features.astype(dtype)
    T, n, _ = X.shape
    h = np.zeros((n, cfg.gru_hidden), dtype=dtype)
    depth = len(cfg.mlp_layers)
    total, count = dtype(0), 0
    for t in range(T):
        H = X[t]
        for layer in range(cfg.gcn_layers):
            H = _act(S[t] @ H @ p[f"gcn.{layer}.weight"], cfg.gcn_activation)
        u = _act(H @ p["gru.W_z"] + h @ p["gru.U_z"] + p["gru.b_z"], "sigmoid")
        r = _act(H @ p["gru.W_r"] + h @ p["gru.U_r"] + p["gru.b_r"], "sigmoid")
        cand = np.tanh(H @ p["gru.W_h"] + (r * h) @ p["gru.U_h"] + p["gru.b_h"])
        h_new = (1 - u) * h + u * cand
        for i in range(n):
            if inputs.presence[t, i]:
                h[i] = h_new[i]
        a = h
        for k in range(depth):
            a = a @ p[f"mlp.{k}.weight"] + p[f"mlp.{k}.bias"]
            if k < depth - 1:
                a = np.maximum(a, 0)
        for i in range(n):
            if mask[t, i]:
                pred = a[i, 0] if inputs.presence[t, i] else dtype(0)
                total += (dtype(y[t, i]) - pred) ** 2
                count += 1
    return total / count
