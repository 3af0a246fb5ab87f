"""Binary checkpoint container.

Layout::

    b"SVCFCKPT\\n"
    <header JSON, one line, sorted keys>\\n
    <tensor data: float64 little-endian, tensors back to back in header order>

The header carries the model config, free-form run metadata and a tensor
table of ``{"name", "shape"}`` entries. Feature statistics are stored as the
tensors ``stats.mean`` and ``stats.std`` so they round-trip bit-exactly.
Writing is canonical, so save -> load -> save reproduces the same bytes.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureStats
from .errors import CheckpointError, ConfigError
from .model import ModelConfig, ModelParams, param_shapes

MAGIC = b"SVCFCKPT\n"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    stats: FeatureStats
    meta: dict = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors = dict(ckpt.params)
    tensors["stats.mean"] = ckpt.stats.mean
    tensors["stats.std"] = ckpt.stats.std
    cfg = dataclasses.asdict(ckpt.config)
    cfg["mlp_layers"] = list(cfg["mlp_layers"])
    header = {
        "format": FORMAT_VERSION,
        "model_config": cfg,
        "feature_names": list(ckpt.stats.names),
        "meta": ckpt.meta,
        "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values())
    return MAGIC + head + b"\n" + body


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(blob[len(MAGIC) : end].decode("utf-8"))
        if header["format"] != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {header['format']}")
        cfg = header["model_config"]
        config = ModelConfig(**{**cfg, "mlp_layers": tuple(cfg["mlp_layers"])})
        table = [(t["name"], tuple(int(d) for d in t["shape"])) for t in header["tensors"]]
        names = tuple(header["feature_names"])
        meta = header.get("meta", {})
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None

    body = memoryview(blob)[end + 1 :]
    pos = 0
    tensors = {}
    for name, shape in table:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(body):
            raise CheckpointError(f"checkpoint truncated inside tensor {name!r}")
        tensors[name] = np.frombuffer(body[pos : pos + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after the last tensor")

    expected = param_shapes(config)
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"tensor {name!r} missing from checkpoint")
        if tensors[name].shape != shape:
            raise CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, config requires {shape}")
    d = (len(names),)
    for name in ("stats.mean", "stats.std"):
        if name not in tensors or tensors[name].shape != d:
            raise CheckpointError(f"tensor {name!r} missing or not of shape {d}")
    extra = set(tensors) - set(expected) - {"stats.mean", "stats.std"}
    if extra:
        raise CheckpointError(f"unexpected tensors {sorted(extra)}")
    params = {name: tensors[name] for name in expected}
    return Checkpoint(params, config, FeatureStats(tensors["stats.mean"], tensors["stats.std"], names), meta)


def save_checkpoint(path: str | os.PathLike, params: ModelParams, config: ModelConfig, stats: FeatureStats, meta: dict | None = None) -> None:
    blob = encode_checkpoint(Checkpoint(params, config, stats, dict(meta or {})))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(blob)
