import struct
from collections import OrderedDict

import numpy as np
import pytest

from checkpoint import (FORMAT_VERSION, MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint,
                        save_checkpoint)
from errors import CheckpointError, CheckpointMagicError, CheckpointTruncatedError, CheckpointVersionError


@pytest.fixture
def arrays(rng):
    return OrderedDict([
        ("params.in.w", rng.normal(size=(4, 8))),
        ("params.in.b", np.zeros(8)),
        ("head.w2", rng.normal(size=(16, 1))),
        ("train.scalar", np.array(3.5)),
    ])


def test_round_trip_is_bitwise(tmp_path, arrays):
    config = {"seed": 3, "model": {"depth": 2}, "kind": "model"}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, config, arrays)
    loaded = load_checkpoint(path)
    assert loaded.config == config
    assert loaded.version == FORMAT_VERSION
    assert list(loaded.arrays) == list(arrays)
    for name, value in arrays.items():
        assert loaded.arrays[name].shape == value.shape
        assert loaded.arrays[name].tobytes() == value.tobytes()
    assert "head.w2" in loaded
    assert list(loaded.group("params.")) == ["params.in.w", "params.in.b"]


def test_header_layout(arrays):
    data = encode_checkpoint({"a": 1}, arrays)
    assert data[:4] == MAGIC
    assert struct.unpack("<I", data[4:8])[0] == FORMAT_VERSION
    length = struct.unpack("<Q", data[8:16])[0]
    assert data[16:16 + length] == b'{"a": 1}'


def test_encoding_is_deterministic(arrays):
    assert encode_checkpoint({"b": 1, "a": 2}, arrays) == encode_checkpoint({"a": 2, "b": 1}, arrays)


def test_bad_magic(arrays):
    data = encode_checkpoint({}, arrays)
    with pytest.raises(CheckpointMagicError):
        decode_checkpoint(b"XXXX" + data[4:])


def test_unknown_version(arrays):
    data = encode_checkpoint({}, arrays, version=FORMAT_VERSION + 1)
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(data)


@pytest.mark.parametrize("cut", [2, 10, 30, -1])
def test_truncation(arrays, cut):
    data = encode_checkpoint({"x": [1, 2]}, arrays)
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(data[:cut])


def test_trailing_bytes_are_rejected(arrays):
    data = encode_checkpoint({}, arrays)
    with pytest.raises(CheckpointError):
        decode_checkpoint(data + b"\x00")


def test_corrupt_config_blob():
    blob = b"{not json"
    data = MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(blob)) + blob + struct.pack("<I", 0)
    with pytest.raises(CheckpointError):
        decode_checkpoint(data)


def test_array_name_must_be_utf8():
    blob = b"{}"
    name = b"\xff\xfe"
    data = (MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(blob)) + blob + struct.pack("<I", 1)
            + struct.pack("<H", len(name)) + name + struct.pack("<B", 1) + struct.pack("<I", 1)
            + struct.pack("<d", 0.0))
    with pytest.raises(CheckpointError, match="UTF-8"):
        decode_checkpoint(data)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")
