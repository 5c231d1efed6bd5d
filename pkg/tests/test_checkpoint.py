"""Checkpoint serialization: bit-exact roundtrips and corruption handling."""

import numpy as np
import pytest

from markit.checkpoint import MAGIC, load_params, save_params
from markit.model import BridgeConfig, DecoderConfig, EncoderConfig, ModelConfig, init_params
from markit.tensorcore import Tensor


def small_params(seed=0):
    cfg = ModelConfig(
        EncoderConfig(width=16, depth=1, heads=2),
        BridgeConfig(width=16, depth=1, heads=2, class_count=4),
        DecoderConfig(width=16, depth=1, heads=2),
        patch_dim=32,
    )
    return init_params(cfg, seed=seed)


def test_roundtrip_bit_exact(tmp_path):
    params = small_params()
    path = tmp_path / "model.bin"
    save_params(path, params)
    loaded = load_params(path)
    assert set(loaded) == set(params)
    for name, t in params.items():
        assert loaded[name].dtype == np.float32
        assert loaded[name].shape == t.shape
        assert np.array_equal(loaded[name], t.data)
        assert loaded[name].tobytes() == t.data.tobytes()


def test_save_twice_identical_bytes(tmp_path):
    params = small_params()
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_params(a, params)
    save_params(b, params)
    assert a.read_bytes() == b.read_bytes()


def test_accepts_plain_arrays(tmp_path):
    arrs = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.zeros(3, dtype=np.float32)}
    path = tmp_path / "p.bin"
    save_params(path, arrs)
    loaded = load_params(path)
    assert np.array_equal(loaded["w"], arrs["w"])
    assert np.array_equal(loaded["b"], arrs["b"])


def test_scalar_rank_zero_tensor(tmp_path):
    path = tmp_path / "s.bin"
    save_params(path, {"s": Tensor(np.float32(2.5))})
    loaded = load_params(path)
    assert loaded["s"].shape == ()
    assert loaded["s"] == np.float32(2.5)


def test_magic_is_checked(tmp_path):
    path = tmp_path / "bad.bin"
    save_params(path, small_params())
    blob = path.read_bytes()
    path.write_bytes(b"NOTMAGIC" + blob[len(MAGIC) :])
    with pytest.raises(ValueError):
        load_params(path)


def test_truncation_detected(tmp_path):
    path = tmp_path / "model.bin"
    save_params(path, small_params())
    blob = path.read_bytes()
    for cut in (len(blob) - 3, len(blob) // 2, len(MAGIC) + 2):
        path.write_bytes(blob[:cut])
        with pytest.raises(ValueError):
            load_params(path)


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    with pytest.raises(ValueError):
        load_params(path)


def test_magic_value():
    assert MAGIC == b"MARKIT1"
