import numpy as np
import pytest

from stylemotion.checkpoint import (
    config_hash,
    load_checkpoint,
    save_checkpoint,
)


def test_config_hash_stable_under_key_order():
    a = {"x": 1, "y": [1, 2], "z": {"a": 0.5, "b": "s"}}
    b = {"z": {"b": "s", "a": 0.5}, "y": [1, 2], "x": 1}
    assert config_hash(a) == config_hash(b)


def test_config_hash_sensitive_to_values():
    assert config_hash({"x": 1}) != config_hash({"x": 2})


def test_checkpoint_roundtrip(tmp_path, rng):
    tensors = {
        "layer.weight": rng.normal(size=(4, 3)).astype(np.float32),
        "layer.bias": rng.normal(size=4).astype(np.float32),
    }
    config = {"hidden": 4, "lr": 1e-3}
    extra = {"final_loss": 0.25}
    save_checkpoint(tmp_path / "ckpt", tensors, config, extra)
    t2, c2, e2 = load_checkpoint(tmp_path / "ckpt")
    assert set(t2) == set(tensors)
    for k in tensors:
        assert np.array_equal(t2[k], tensors[k])
    assert c2 == config
    assert e2 == extra


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing")


def test_tensor_names_with_dots_and_slashes(tmp_path):
    tensors = {"a.b/c.weight": np.ones((2, 2), dtype=np.float32)}
    save_checkpoint(tmp_path / "ckpt", tensors, {})
    t2, _, _ = load_checkpoint(tmp_path / "ckpt")
    assert np.array_equal(t2["a.b/c.weight"], tensors["a.b/c.weight"])
