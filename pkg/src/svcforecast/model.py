"""Spatiotemporal forecaster: stacked GCN per window, shared GRU across windows, MLP head.

Shapes used throughout (T windows, N vocabulary nodes):

* operators ``S``: (T, N, N) symmetric-normalized propagation matrices
* inputs ``X``: (T, N, d + time_enc_dim), zero rows for absent nodes
* hidden states: (T, N, gru_hidden), row ``t`` is the state *after* window ``t``
* predictions: (T, N), row ``t`` forecasts the target at window ``t + horizon``

Parameters live in an ordered ``dict[str, np.ndarray]`` (see `param_shapes`).
Gradients come from a hand-written backward pass through the MLP, the GRU
unrolled over every window, and every GCN layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FEATURES, SnapshotSequence
from .errors import ConfigError, DimensionError, EvaluationError, UsageError
from .graph import propagation_operator
from .numcore import ACTIVATIONS, activate, activation_grad, matmul, sigmoid

ModelParams = dict  # name -> float64 ndarray, insertion-ordered

GRU_WEIGHTS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


@dataclass(frozen=True)
class ModelConfig:
    in_features: int = len(FEATURES)
    gcn_layers: int = 2
    gcn_hidden: int = 32
    gcn_activation: str = "relu"
    time_enc_dim: int = 2
    gru_hidden: int = 32
    mlp_layers: tuple[int, ...] = (32, 16, 1)
    symmetrize: str = "max"
    edge_scale: str = "max"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mlp_layers", tuple(int(w) for w in self.mlp_layers))
        if self.gcn_layers < 1:
            raise ConfigError("gcn_layers must be >= 1")
        if min(self.in_features, self.gcn_hidden, self.gru_hidden) < 1:
            raise ConfigError("in_features, gcn_hidden and gru_hidden must be >= 1")
        if self.gcn_activation not in ACTIVATIONS:
            raise ConfigError(f"gcn_activation must be one of {ACTIVATIONS}")
        if self.time_enc_dim < 0 or self.time_enc_dim % 2:
            raise ConfigError(f"time_enc_dim must be even and >= 0, got {self.time_enc_dim}")
        if not self.mlp_layers or self.mlp_layers[-1] != 1 or min(self.mlp_layers) < 1:
            raise ConfigError(f"mlp_layers must be positive widths ending in 1, got {self.mlp_layers}")
        if self.symmetrize not in ("max", "sum"):
            raise ConfigError("symmetrize must be 'max' or 'sum'")
        if self.edge_scale not in ("max", "none"):
            raise ConfigError("edge_scale must be 'max' or 'none'")

    @property
    def input_width(self) -> int:
        return self.in_features + self.time_enc_dim


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    width = config.input_width
    for layer in range(config.gcn_layers):
        shapes[f"gcn.{layer}.weight"] = (width, config.gcn_hidden)
        width = config.gcn_hidden
    hid = config.gru_hidden
    for gate in ("z", "r", "h"):
        shapes[f"gru.W_{gate}"] = (width, hid)
        shapes[f"gru.U_{gate}"] = (hid, hid)
        shapes[f"gru.b_{gate}"] = (hid,)
    width = hid
    for k, out in enumerate(config.mlp_layers):
        shapes[f"mlp.{k}.weight"] = (width, out)
        shapes[f"mlp.{k}.bias"] = (out,)
        width = out
    return shapes


def init_params(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn in `param_shapes` order from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def check_params(params: ModelParams, config: ModelConfig) -> None:
    expected = param_shapes(config)
    if list(params) != list(expected):
        raise DimensionError(f"parameter names {list(params)} do not match config {list(expected)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise DimensionError(f"{name} has shape {params[name].shape}, config needs {shape}")


def flatten(params: ModelParams) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params.values()])


def unflatten(vector: np.ndarray, config: ModelConfig) -> ModelParams:
    out, pos = {}, 0
    for name, shape in param_shapes(config).items():
        size = int(np.prod(shape))
        out[name] = np.array(vector[pos : pos + size], dtype=np.float64).reshape(shape)
        pos += size
    if pos != len(vector):
        raise DimensionError(f"vector of length {len(vector)} does not match {pos} parameters")
    return out


def time_encode(window_index: int, dim: int) -> np.ndarray:
    """Sinusoidal encoding of a window index: interleaved [sin, cos] pairs, frequencies 10000^(-2k/dim)."""
    if dim < 0 or dim % 2:
        raise ConfigError(f"time encoding dimension must be even and >= 0, got {dim}")
    if dim == 0:
        return np.zeros(0)
    k = np.arange(dim // 2)
    angle = window_index / np.power(10000.0, 2.0 * k / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def gcn_forward(S: np.ndarray, H: np.ndarray, W: np.ndarray, activation: str = "relu") -> np.ndarray:
    """One graph convolution, act(S H W). No bias."""
    if S.shape[0] != S.shape[1] or S.shape[1] != H.shape[0]:
        raise DimensionError(f"operator {S.shape} does not match node features {H.shape}")
    return activate(matmul(matmul(S, H), W), activation)


def gcn_stack(S: np.ndarray, X: np.ndarray, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Apply every GCN layer to time-augmented features ``X`` (N x input_width)."""
    H = X
    for layer in range(config.gcn_layers):
        H = gcn_forward(S, H, params[f"gcn.{layer}.weight"], config.gcn_activation)
    return H


def gru_cell(z: np.ndarray, h_prev: np.ndarray, params: ModelParams) -> np.ndarray:
    """Single GRU step shared by all nodes (rows)."""
    W_z, W_r, W_h = params["gru.W_z"], params["gru.W_r"], params["gru.W_h"]
    if z.ndim != 2 or z.shape[1] != W_z.shape[0]:
        raise DimensionError(f"GRU input {z.shape} does not match W_z {W_z.shape}")
    if h_prev.shape != (z.shape[0], W_z.shape[1]):
        raise DimensionError(f"hidden state {h_prev.shape} should be {(z.shape[0], W_z.shape[1])}")
    u = sigmoid(z @ W_z + h_prev @ params["gru.U_z"] + params["gru.b_z"])
    r = sigmoid(z @ W_r + h_prev @ params["gru.U_r"] + params["gru.b_r"])
    cand = np.tanh(z @ W_h + (r * h_prev) @ params["gru.U_h"] + params["gru.b_h"])
    return (1.0 - u) * h_prev + u * cand


def _mlp_depth(params: ModelParams) -> int:
    return sum(1 for name in params if name.startswith("mlp.") and name.endswith(".weight"))


def mlp_forward(h: np.ndarray, params: ModelParams) -> np.ndarray:
    """Affine + relu for every layer but the last, which stays affine."""
    depth = _mlp_depth(params)
    a = h
    for k in range(depth):
        W = params[f"mlp.{k}.weight"]
        if a.shape[-1] != W.shape[0]:
            raise DimensionError(f"MLP layer {k} expects width {W.shape[0]}, got {a.shape}")
        a = a @ W + params[f"mlp.{k}.bias"]
        if k < depth - 1:
            a = np.maximum(a, 0.0)
    return a


@dataclass
class ModelInputs:
    operators: np.ndarray
    features: np.ndarray
    presence: np.ndarray

    @property
    def num_windows(self) -> int:
        return self.features.shape[0]


def prepare_inputs(seq: SnapshotSequence, config: ModelConfig) -> ModelInputs:
    """Build per-window operators and time-augmented features for a sequence."""
    if seq.num_windows == 0:
        raise UsageError("empty window range")
    feats = seq.features
    if feats.shape[2] != config.in_features:
        raise DimensionError(f"sequence has {feats.shape[2]} features, config expects {config.in_features}")
    S = np.stack([propagation_operator(s, config.symmetrize, config.edge_scale) for s in seq.snapshots])
    enc = np.stack([time_encode(s.window_index, config.time_enc_dim) for s in seq.snapshots])
    T, N, _ = feats.shape
    X = np.concatenate([feats, np.broadcast_to(enc[:, None, :], (T, N, config.time_enc_dim))], axis=2)
    X = X * seq.presence[:, :, None]
    return ModelInputs(S, X, seq.presence.copy())


@dataclass
class ForwardCache:
    params: ModelParams
    config: ModelConfig
    inputs: ModelInputs
    gcn_in: list = field(default_factory=list)  # S @ H per layer
    gcn_pre: list = field(default_factory=list)
    gcn_out: list = field(default_factory=list)
    h_prev: np.ndarray | None = None
    u: np.ndarray | None = None
    r: np.ndarray | None = None
    cand: np.ndarray | None = None
    mlp_in: list = field(default_factory=list)
    mlp_pre: list = field(default_factory=list)


@dataclass
class ForwardResult:
    predictions: np.ndarray  # (T, N); zero for absent nodes
    hidden: np.ndarray  # (T, N, H)
    final_state: np.ndarray  # (N, H)
    cache: ForwardCache | None


def model_forward(
    inputs: ModelInputs | SnapshotSequence,
    params: ModelParams,
    config: ModelConfig,
    h0: np.ndarray | None = None,
    keep_cache: bool = True,
) -> ForwardResult:
    if isinstance(inputs, SnapshotSequence):
        inputs = prepare_inputs(inputs, config)
    S, X, present = inputs.operators, inputs.features, inputs.presence
    T, N, _ = X.shape
    if T == 0:
        raise UsageError("empty window range")
    hid = config.gru_hidden
    cache = ForwardCache(params, config, inputs) if keep_cache else None

    H = X
    for layer in range(config.gcn_layers):
        SH = S @ H
        pre = SH @ params[f"gcn.{layer}.weight"]
        H = activate(pre, config.gcn_activation)
        if cache:
            cache.gcn_in.append(SH)
            cache.gcn_pre.append(pre)
            cache.gcn_out.append(H)
    z = H

    xu = z @ params["gru.W_z"] + params["gru.b_z"]
    xr = z @ params["gru.W_r"] + params["gru.b_r"]
    xc = z @ params["gru.W_h"] + params["gru.b_h"]
    U_z, U_r, U_h = params["gru.U_z"], params["gru.U_r"], params["gru.U_h"]

    h = np.zeros((N, hid)) if h0 is None else np.array(h0, dtype=np.float64)
    if h.shape != (N, hid):
        raise DimensionError(f"initial state {h.shape} should be {(N, hid)}")
    hidden = np.empty((T, N, hid))
    if cache:
        cache.h_prev, cache.u, cache.r, cache.cand = (np.empty((T, N, hid)) for _ in range(4))
    for t in range(T):
        u = sigmoid(xu[t] + h @ U_z)
        r = sigmoid(xr[t] + h @ U_r)
        cand = np.tanh(xc[t] + (r * h) @ U_h)
        h_new = h + u * (cand - h)
        if cache:
            cache.h_prev[t], cache.u[t], cache.r[t], cache.cand[t] = h, u, r, cand
        h = np.where(present[t][:, None], h_new, h)
        hidden[t] = h

    depth = _mlp_depth(params)
    a = hidden
    for k in range(depth):
        if cache:
            cache.mlp_in.append(a)
        a = a @ params[f"mlp.{k}.weight"] + params[f"mlp.{k}.bias"]
        if cache:
            cache.mlp_pre.append(a)
        if k < depth - 1:
            a = np.maximum(a, 0.0)
    predictions = np.where(present, a[..., 0], 0.0)
    return ForwardResult(predictions, hidden, h, cache)


def mse_loss(y: np.ndarray, y_hat: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean squared error over masked-in (node, window) pairs."""
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"targets {y.shape} and predictions {y_hat.shape} differ")
    mask = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise EvaluationError("no participating node-window pairs")
    diff = (y - y_hat)[mask]
    return float(diff @ diff / n)


def mse_grad(y: np.ndarray, y_hat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d(mse_loss)/d(y_hat)."""
    n = int(mask.sum())
    if n == 0:
        raise EvaluationError("no participating node-window pairs")
    return np.where(mask, 2.0 * (y_hat - y) / n, 0.0)


def model_backward(cache: ForwardCache | None, d_pred: np.ndarray) -> ModelParams:
    """Gradient of a scalar loss w.r.t. every parameter, given dL/d(predictions)."""
    if cache is None or cache.h_prev is None:
        raise UsageError("model_backward needs the cache of a forward pass run with keep_cache=True")
    params, config, inputs = cache.params, cache.config, cache.inputs
    T, N, hid = cache.h_prev.shape
    d_pred = np.asarray(d_pred, dtype=np.float64)
    if d_pred.shape != (T, N):
        raise UsageError(f"loss gradient {d_pred.shape} does not match cached forward {(T, N)}")
    present = inputs.presence
    grads = {name: np.zeros_like(p) for name, p in params.items()}

    # MLP head, batched over windows and nodes
    depth = _mlp_depth(params)
    da = np.where(present, d_pred, 0.0)[..., None]
    for k in reversed(range(depth)):
        a_in = cache.mlp_in[k]
        W = params[f"mlp.{k}.weight"]
        grads[f"mlp.{k}.weight"] = a_in.reshape(-1, W.shape[0]).T @ da.reshape(-1, W.shape[1])
        grads[f"mlp.{k}.bias"] = da.reshape(-1, W.shape[1]).sum(axis=0)
        da = da @ W.T
        if k > 0:
            da = da * (cache.mlp_pre[k - 1] > 0)
    dh_out = da

    # GRU unrolled backwards
    U_z, U_r, U_h = params["gru.U_z"], params["gru.U_r"], params["gru.U_h"]
    d_au = np.zeros((T, N, hid))
    d_ar = np.zeros((T, N, hid))
    d_ac = np.zeros((T, N, hid))
    dU_z, dU_r, dU_h = np.zeros_like(U_z), np.zeros_like(U_r), np.zeros_like(U_h)
    carry = np.zeros((N, hid))
    for t in reversed(range(T)):
        m = present[t][:, None]
        dh = dh_out[t] + carry
        dh_new = np.where(m, dh, 0.0)
        dh_prev = np.where(m, 0.0, dh)
        hp, u, r, c = cache.h_prev[t], cache.u[t], cache.r[t], cache.cand[t]

        du = dh_new * (c - hp)
        dh_prev += dh_new * (1.0 - u)
        dac = dh_new * u * (1.0 - c * c)
        rh = r * hp
        dU_h += rh.T @ dac
        drh = dac @ U_h.T
        dh_prev += drh * r
        dar = drh * hp * r * (1.0 - r)
        dU_r += hp.T @ dar
        dh_prev += dar @ U_r.T
        dau = du * u * (1.0 - u)
        dU_z += hp.T @ dau
        dh_prev += dau @ U_z.T

        d_au[t], d_ar[t], d_ac[t] = dau, dar, dac
        carry = dh_prev

    z = cache.gcn_out[-1]
    z2 = z.reshape(-1, z.shape[-1])
    dz = np.zeros_like(z)
    for gate, dgate in (("z", d_au), ("r", d_ar), ("h", d_ac)):
        dg2 = dgate.reshape(-1, hid)
        grads[f"gru.W_{gate}"] = z2.T @ dg2
        grads[f"gru.b_{gate}"] = dg2.sum(axis=0)
        dz += dgate @ params[f"gru.W_{gate}"].T
    grads["gru.U_z"], grads["gru.U_r"], grads["gru.U_h"] = dU_z, dU_r, dU_h

    # GCN stack
    S_T = np.swapaxes(inputs.operators, 1, 2)
    dH = dz
    for layer in reversed(range(config.gcn_layers)):
        W = params[f"gcn.{layer}.weight"]
        dP = dH * activation_grad(cache.gcn_pre[layer], cache.gcn_out[layer], config.gcn_activation)
        SH = cache.gcn_in[layer]
        grads[f"gcn.{layer}.weight"] = SH.reshape(-1, W.shape[0]).T @ dP.reshape(-1, W.shape[1])
        if layer > 0:
            dH = S_T @ (dP @ W.T)
    return grads


def loss_and_grad(inputs: ModelInputs, targets: np.ndarray, mask: np.ndarray, params: ModelParams, config: ModelConfig):
    result = model_forward(inputs, params, config)
    loss = mse_loss(targets, result.predictions, mask)
    grads = model_backward(result.cache, mse_grad(targets, result.predictions, mask))
    return loss, grads
