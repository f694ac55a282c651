import struct

import numpy as np
import pytest

from convnilm.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from convnilm.errors import IntegrityError, StructuralError
from convnilm.model import build_model, desk_config, paper_config, tiny_config
from convnilm.nncore import OpMode
from convnilm.train import NAdam


@pytest.fixture
def saved(tmp_path):
    model = build_model(tiny_config(32), seed=3)
    rng = np.random.default_rng(0)
    # move running statistics away from their initial values
    model.forward(rng.normal(size=(4, 32)), OpMode.TRAIN, rng)
    model.standardizer = {"mean": 412.5, "std": 96.25}
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, {"seed": 3, "epochs": 0})
    return model, path


def test_round_trip_tensors_bit_exact(saved):
    model, path = saved
    loaded, header = load_checkpoint(path)
    assert set(loaded.params) == set(model.params)
    for k, v in model.params.items():
        assert loaded.params[k].dtype == v.dtype
        np.testing.assert_array_equal(loaded.params[k], v)
    assert loaded.config == model.config
    assert loaded.standardizer == model.standardizer
    assert header["metadata"] == {"seed": 3, "epochs": 0}


def test_round_trip_forward_bit_exact(saved):
    model, path = saved
    loaded, _ = load_checkpoint(path)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.normal(scale=rng.uniform(0.1, 5), size=(2, 32))
        assert np.array_equal(model.forward(x), loaded.forward(x))


def test_float64_round_trip(tmp_path):
    model = build_model(tiny_config(32), seed=0, dtype=np.float64)
    save_checkpoint(model, tmp_path / "m.ckpt")
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.dtype == np.float64
    x = np.random.default_rng(0).normal(size=(3, 32))
    assert np.array_equal(model.forward(x), loaded.forward(x))


def test_optimizer_state_round_trip(tmp_path):
    model = build_model(tiny_config(32), seed=0, dtype=np.float64)
    opt = NAdam()
    grads = {k: np.ones_like(model.params[k]) for k in model.trainable()}
    opt.step(model.params, grads)
    save_checkpoint(model, tmp_path / "m.ckpt", optimizer=opt)
    _, header = load_checkpoint(tmp_path / "m.ckpt")
    assert header["optimizer"]["t"] == 1
    for k in model.trainable():
        np.testing.assert_array_equal(header["optimizer_tensors"][f"opt.m.{k}"], opt.m[k])


def test_save_is_deterministic(tmp_path):
    model = build_model(tiny_config(32), seed=0)
    save_checkpoint(model, tmp_path / "a.ckpt", {"x": 1})
    save_checkpoint(model, tmp_path / "b.ckpt", {"x": 1})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_header_layout(saved):
    _, path = saved
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    version, length, _ = struct.unpack("<IQI", blob[8:24])
    assert version == FORMAT_VERSION
    assert length == len(blob) - 24


@pytest.mark.parametrize("keep", [0, 7, 20, 100, -1])
def test_truncated_file(saved, tmp_path, keep):
    _, path = saved
    blob = path.read_bytes()
    bad = tmp_path / "cut.ckpt"
    bad.write_bytes(blob[:keep] if keep >= 0 else blob[:-1])
    with pytest.raises(IntegrityError):
        load_checkpoint(bad)


def test_bad_magic(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError, match="magic"):
        read_checkpoint(path)


def test_unsupported_version(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError, match="version"):
        read_checkpoint(path)


def test_corrupt_payload(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[-5] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        read_checkpoint(path)


def test_trailing_bytes(saved):
    _, path = saved
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(IntegrityError):
        read_checkpoint(path)


def test_desk_checkpoint_against_paper_config(tmp_path):
    model = build_model(desk_config(64), seed=0)
    save_checkpoint(model, tmp_path / "desk.ckpt")
    with pytest.raises(StructuralError):
        load_checkpoint(tmp_path / "desk.ckpt", expected_config=paper_config())
