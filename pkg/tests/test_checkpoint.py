import json

import numpy as np
import pytest

from svcforecast.checkpoint import MAGIC, Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from svcforecast.data import FeatureStats
from svcforecast.errors import CheckpointError
from svcforecast.model import ModelConfig, init_params

CFG = ModelConfig(gcn_hidden=5, gru_hidden=4, mlp_layers=(3, 1), seed=11)


def make_ckpt():
    rng = np.random.default_rng(0)
    params = {k: v + rng.normal(size=v.shape) * 1e-3 for k, v in init_params(CFG).items()}
    stats = FeatureStats(np.array([0.1, 0.2, 33.3, 1234.5]), np.array([0.01, 0.02, 5.5, 300.0]))
    return Checkpoint(params, CFG, stats, {"window_len_s": 300, "horizon_steps": 1})


def test_save_load_save_is_byte_identical(tmp_path):
    ck = make_ckpt()
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    save_checkpoint(a, ck.params, ck.config, ck.stats, ck.meta)
    back = load_checkpoint(a)
    save_checkpoint(b, back.params, back.config, back.stats, back.meta)
    assert a.read_bytes() == b.read_bytes()
    assert back.config == CFG
    assert back.meta == ck.meta
    for k in ck.params:
        assert back.params[k].tobytes() == ck.params[k].tobytes()
    assert back.stats.std.tobytes() == ck.stats.std.tobytes()


def test_header_is_self_describing():
    blob = encode_checkpoint(make_ckpt())
    assert blob.startswith(MAGIC)
    header = json.loads(blob[len(MAGIC): blob.index(b"\n", len(MAGIC))])
    names = [t["name"] for t in header["tensors"]]
    assert names[0] == "gcn.0.weight" and names[-2:] == ["stats.mean", "stats.std"]
    assert header["model_config"]["gru_hidden"] == 4


@pytest.mark.parametrize("cut", [3, len(MAGIC) + 5, -1, -8, -100])
def test_truncated_file(cut):
    blob = encode_checkpoint(make_ckpt())
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:cut])


def test_bad_magic_and_trailing_bytes():
    blob = encode_checkpoint(make_ckpt())
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"X" + blob[1:])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(blob + b"\0" * 8)


def test_declared_shape_mismatch_names_tensor():
    blob = encode_checkpoint(make_ckpt())
    end = blob.index(b"\n", len(MAGIC))
    header = json.loads(blob[len(MAGIC):end])
    for t in header["tensors"]:
        if t["name"] == "gru.U_z":
            t["shape"] = [2, 8]  # same element count, wrong shape
    forged = MAGIC + json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + blob[end:]
    with pytest.raises(CheckpointError, match="gru.U_z"):
        decode_checkpoint(forged)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")
