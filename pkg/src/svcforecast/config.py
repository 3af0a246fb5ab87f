"""``key = value`` configuration files shared by the simulator and the CLI.

One setting per line, ``#`` starts a comment, unknown keys are rejected.
Lists are comma separated; load profiles are ``t:rps`` pairs
(``load_profile = 0:200, 3600:4800``). When ``load_profile`` is empty the
simulator uses a sinusoid between ``load_min_rps`` and ``load_max_rps``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .errors import ConfigError
from .model import ModelConfig
from .simgen import BAND_NAMES, DEFAULT_PERIOD_S, SimConfig, sine_profile
from .train import TrainConfig


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.lower() in ("none", "") else float(text)


def _profile(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        t, _, rps = item.partition(":")
        pairs.append((float(t), float(rps)))
    return tuple(pairs)


def _names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


@dataclass(frozen=True)
class RunConfig:
    # data
    metrics_path: str = ""
    calls_path: str = ""
    window_len_s: int = 300
    horizon_steps: int = 1
    train_frac: float = 0.6
    val_frac: float = 0.2
    # model
    gcn_layers: int = 2
    gcn_hidden: int = 32
    gcn_activation: str = "relu"
    time_enc_dim: int = 2
    gru_hidden: int = 32
    mlp_layers: tuple[int, ...] = (32, 16, 1)
    symmetrize: str = "max"
    edge_scale: str = "max"
    # training
    epochs: int = 1000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float | None = 5.0
    early_stop_patience: int = 100
    # simulation
    depth: int = 3
    fanout: int = 2
    base_service_time_ms: tuple[float, ...] = (5.0, 20.0)
    capacity_rps: float = 8000.0
    load_profile: tuple[tuple[float, float], ...] = ()
    load_min_rps: float = 200.0
    load_max_rps: float = 4800.0
    load_period_s: float = DEFAULT_PERIOD_S
    noise_std_frac: float = 0.05
    duration_s: int = 90000
    tick_s: int = 60
    start_s: int = 0
    serial: bool = False
    # sweeps
    sweep_windows_min: tuple[float, ...] = (5.0, 10.0, 30.0)
    sweep_bands: tuple[str, ...] = BAND_NAMES
    # run
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        if self.window_len_s <= 0:
            raise ConfigError("window_len_s must be > 0")
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if self.train_frac <= 0 or self.val_frac <= 0 or self.train_frac + self.val_frac >= 1:
            raise ConfigError("train_frac and val_frac must be positive with train_frac + val_frac < 1")
        if len(self.base_service_time_ms) not in (1, 2):
            raise ConfigError("base_service_time_ms takes one value or a 'low,high' range")
        for name in self.sweep_bands:
            if name not in BAND_NAMES:
                raise ConfigError(f"unknown band {name!r} in sweep_bands; expected {BAND_NAMES}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            gcn_layers=self.gcn_layers,
            gcn_hidden=self.gcn_hidden,
            gcn_activation=self.gcn_activation,
            time_enc_dim=self.time_enc_dim,
            gru_hidden=self.gru_hidden,
            mlp_layers=self.mlp_layers,
            symmetrize=self.symmetrize,
            edge_scale=self.edge_scale,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            grad_clip_norm=self.grad_clip_norm,
            early_stop_patience=self.early_stop_patience,
        )

    def sim_config(self) -> SimConfig:
        base = self.base_service_time_ms
        profile = self.load_profile or sine_profile(self.load_min_rps, self.load_max_rps, self.load_period_s, self.duration_s)
        return SimConfig(
            depth=self.depth,
            fanout=self.fanout,
            base_service_time_ms=(base[0], base[-1]),
            capacity_rps=self.capacity_rps,
            load_profile=profile,
            noise_std_frac=self.noise_std_frac,
            duration_s=self.duration_s,
            tick_s=self.tick_s,
            start_s=self.start_s,
            serial=self.serial,
            seed=self.seed,
        )


_PARSERS = {
    "mlp_layers": _ints,
    "base_service_time_ms": _floats,
    "load_profile": _profile,
    "sweep_windows_min": _floats,
    "sweep_bands": _names,
    "grad_clip_norm": _opt_float,
    "serial": _bool,
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, value: str):
    if key in _PARSERS:
        return _PARSERS[key](value)
    kind = _TYPES[key]
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def run_config(values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Overlay string ``values`` onto ``base`` (defaults when omitted)."""
    base = base or RunConfig()
    updates = {}
    for key, value in values.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    try:
        return dataclasses.replace(base, **updates)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path: str | os.PathLike | None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values = parse_kv(fh.read(), str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values.update(overrides or {})
    return run_config(values)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{t!r}:{r!r}" for t, r in value)
        return ",".join(_fmt(v) for v in value)
    return str(value)


def dump_run_config(cfg: RunConfig) -> str:
    """Render every field as ``key = value``; `load_run_config` reads it back to an equal config."""
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


SIM_KEYS = (
    "depth", "fanout", "base_service_time_ms", "capacity_rps", "load_profile", "load_min_rps",
    "load_max_rps", "load_period_s", "noise_std_frac", "duration_s", "tick_s", "start_s", "serial", "seed",
)


def load_sim_config(path: str | os.PathLike) -> SimConfig:
    """Read a simulator-only config file; keys outside `SIM_KEYS` are rejected."""
    with open(path, encoding="utf-8") as fh:
        values = parse_kv(fh.read(), str(path))
    unknown = sorted(set(values) - set(SIM_KEYS))
    if unknown:
        raise ConfigError(f"unknown simulator config key {unknown[0]!r}")
    return run_config(values).sim_config()
