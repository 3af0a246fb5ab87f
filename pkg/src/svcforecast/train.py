"""Full-sequence Adam training with gradient clipping and validation-based early stopping."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .data import SnapshotSequence
from .errors import ConfigError, DivergenceError, InputError, UsageError
from .model import ModelConfig, ModelInputs, ModelParams, init_params, model_backward, model_forward, mse_grad, mse_loss, prepare_inputs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float | None = 5.0
    early_stop_patience: int = 100

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie strictly between 0 and 1")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be > 0")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be > 0 or None")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    def write_csv(self, fh: IO[str], timing: bool = False) -> None:
        """Write ``epoch,train_loss,val_loss,seconds``; seconds stays blank unless ``timing``."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.seconds:.6f}" if timing else ""])


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, config: TrainConfig, step: int):
    """One bias-corrected Adam update. Returns new (params, state); inputs are not modified."""
    if step < 1:
        raise UsageError("Adam step count starts at 1")
    if list(grads) != list(params) or any(grads[k].shape != params[k].shape for k in params):
        raise UsageError("gradients do not match the parameter structure")
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_params[k] = p - config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new)


def global_norm(grads: ModelParams) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_by_global_norm(grads: ModelParams, max_norm: float | None) -> ModelParams:
    if max_norm is None:
        return grads
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class _Objective:
    """Inputs truncated to the last window that feeds a supervised prediction."""

    inputs: ModelInputs
    targets: np.ndarray
    mask: np.ndarray

    @classmethod
    def build(cls, seq: SnapshotSequence, inputs: ModelInputs, name: str) -> "_Objective":
        windows = seq.supervised_windows
        mask = seq.target_mask
        if not windows or not mask.any():
            raise InputError(f"{name} sequence has no supervised windows")
        stop = windows[-1] + 1
        sliced = ModelInputs(inputs.operators[:stop], inputs.features[:stop], inputs.presence[:stop])
        return cls(sliced, seq.targets[:stop], mask[:stop])

    def loss(self, params: ModelParams, config: ModelConfig) -> float:
        pred = model_forward(self.inputs, params, config, keep_cache=False).predictions
        return mse_loss(self.targets, pred, self.mask)

    def loss_and_grad(self, params: ModelParams, config: ModelConfig):
        res = model_forward(self.inputs, params, config)
        loss = mse_loss(self.targets, res.predictions, self.mask)
        if not math.isfinite(loss):
            return loss, None
        return loss, model_backward(res.cache, mse_grad(self.targets, res.predictions, self.mask))


def _same_timeline(a: SnapshotSequence, b: SnapshotSequence) -> bool:
    return a.snapshots is b.snapshots


def train_loop(
    train_seq: SnapshotSequence,
    val_seq: SnapshotSequence,
    model_config: ModelConfig,
    train_config: TrainConfig,
    params: ModelParams | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Train end to end; return the parameters with the lowest validation loss and the history."""
    params = init_params(model_config) if params is None else params
    history = TrainHistory()
    train_inputs = prepare_inputs(train_seq, model_config)
    val_inputs = train_inputs if _same_timeline(train_seq, val_seq) else prepare_inputs(val_seq, model_config)
    train_obj = _Objective.build(train_seq, train_inputs, "training")
    val_obj = _Objective.build(val_seq, val_inputs, "validation")
    if train_config.epochs == 0:
        return params, history

    state = AdamState.zeros_like(params)
    best_params, best_val, stale = params, math.inf, 0
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        loss, grads = train_obj.loss_and_grad(params, model_config)
        if not math.isfinite(loss):
            raise DivergenceError("training loss is not finite", epoch)
        grads = clip_by_global_norm(grads, train_config.grad_clip_norm)
        params, state = adam_step(params, grads, state, train_config, epoch)
        val = val_obj.loss(params, model_config)
        if not math.isfinite(val):
            raise DivergenceError("validation loss is not finite", epoch)
        history.records.append(EpochRecord(epoch, loss, val, time.perf_counter() - t0))
        if val < best_val:
            best_params, best_val, stale = params, val, 0
        else:
            stale += 1
            if stale >= train_config.early_stop_patience:
                log.info("early stop at epoch %d (best val %.6g)", epoch, best_val)
                break
    return best_params, history
