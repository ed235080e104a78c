import struct

import numpy as np
import pytest

from recoat.checkpoint import MAGIC, VERSION, CheckpointError, load_checkpoint, save_checkpoint, to_float32_grid


def test_roundtrip_exact_at_float32(tmp_path, rng):
    tensors = {"a.w": rng.normal(size=(3, 4)), "scalar": np.array(2.5), "b": rng.normal(size=7)}
    save_checkpoint(tmp_path / "c.rcat", tensors)
    back = load_checkpoint(tmp_path / "c.rcat")
    assert list(back) == list(tensors)
    for n, a in tensors.items():
        assert back[n].shape == a.shape and back[n].dtype == np.float64
        np.testing.assert_array_equal(back[n], a.astype(np.float32).astype(np.float64))


def test_layout(tmp_path):
    save_checkpoint(tmp_path / "c.rcat", {"xy": np.array([[1.0, 2.0]])})
    raw = (tmp_path / "c.rcat").read_bytes()
    assert raw[:4] == MAGIC == b"RCAT"
    assert struct.unpack("<II", raw[4:12]) == (VERSION, 1)
    assert struct.unpack("<I", raw[12:16]) == (2,) and raw[16:18] == b"xy"
    assert struct.unpack("<III", raw[18:30]) == (2, 1, 2)
    assert np.frombuffer(raw[30:], "<f4").tolist() == [1.0, 2.0]


def test_float32_grid_values_are_lossless(tmp_path, rng):
    a = to_float32_grid(rng.normal(size=50))
    save_checkpoint(tmp_path / "c.rcat", {"a": a})
    np.testing.assert_array_equal(load_checkpoint(tmp_path / "c.rcat")["a"], a)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 99) + b[8:],
    lambda b: b[:-3],
    lambda b: b + b"\0",
])
def test_corrupt_files_rejected(tmp_path, mutate):
    p = tmp_path / "c.rcat"
    save_checkpoint(p, {"a": np.ones((2, 2))})
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_deterministic_bytes(tmp_path, rng):
    t = {"a": rng.normal(size=(5, 5))}
    save_checkpoint(tmp_path / "1.rcat", t)
    save_checkpoint(tmp_path / "2.rcat", t)
    assert (tmp_path / "1.rcat").read_bytes() == (tmp_path / "2.rcat").read_bytes()
