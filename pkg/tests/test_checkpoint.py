import struct
import zlib

import numpy as np
import pytest

from xfmr import load_checkpoint, save_checkpoint
from xfmr.checkpoint import MAGIC, CheckpointError


def sample_entries():
    rng = np.random.default_rng(0)
    return {
        "stage1.cel.kernel": rng.standard_normal((4, 4, 3, 8)).astype(np.float32),
        "stage1.block.norm.gamma": rng.standard_normal(16).astype(np.float64),
        "scalar": np.float32(3.25).reshape(()),
    }


def test_roundtrip_bitwise(tmp_path):
    path = tmp_path / "model.xfmr"
    entries = sample_entries()
    save_checkpoint(path, entries)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(entries)
    for name in entries:
        assert loaded[name].dtype == entries[name].dtype
        assert loaded[name].shape == entries[name].shape
        assert (loaded[name] == entries[name]).all()


def test_header_layout(tmp_path):
    path = tmp_path / "m.xfmr"
    save_checkpoint(path, {"a": np.zeros(2, dtype=np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == MAGIC == b"XFMR"
    version, count = struct.unpack_from("<II", raw, 4)
    assert (version, count) == (1, 1)
    name_len = struct.unpack_from("<I", raw, 12)[0]
    assert name_len == 1 and raw[16:17] == b"a"
    dtype_code, rank = struct.unpack_from("<BB", raw, 17)
    assert (dtype_code, rank) == (0, 1)
    (extent,) = struct.unpack_from("<Q", raw, 19)
    assert extent == 2
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    assert crc == zlib.crc32(raw[:-4])


def test_every_corrupted_byte_detected(tmp_path):
    path = tmp_path / "m.xfmr"
    save_checkpoint(path, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    raw = bytearray(path.read_bytes())
    for pos in range(len(raw)):
        mutated = bytearray(raw)
        mutated[pos] ^= 0xFF
        path.write_bytes(bytes(mutated))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_duplicate_names_rejected(tmp_path):
    class Sneaky(dict):
        def __iter__(self):
            return iter(["x", "x"])

    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "m.xfmr", Sneaky(x=np.zeros(1, dtype=np.float32)))


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "m.xfmr", {"x": np.zeros(3, dtype=np.int32)})


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "m.xfmr"
    save_checkpoint(path, sample_entries())
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_model_weights_roundtrip(tmp_path):
    from xfmr import build_model, toy_spec

    model = build_model(toy_spec(classes=4), seed=3)
    entries = {name: p.data for name, p in model.named_parameters()}
    path = tmp_path / "toy.xfmr"
    save_checkpoint(path, entries)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(entries)
    assert all((loaded[k] == entries[k]).all() for k in entries)
