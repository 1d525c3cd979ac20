"""Binary checkpoint: "FDSM" magic, u32 version, u64-prefixed JSON config, then named f64 arrays.

All integers and payloads are little-endian. Per array: u16 name length + UTF-8 name,
u8 rank, u32 per dimension, then the C-ordered float64 payload.
"""
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from errors import CheckpointError, CheckpointMagicError, CheckpointTruncatedError, CheckpointVersionError

logger = logging.getLogger(__name__)

MAGIC = b"FDSM"
FORMAT_VERSION = 1

U8 = struct.Struct("<B")
U16 = struct.Struct("<H")
U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")
F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    config: dict
    arrays: OrderedDict = field(default_factory=OrderedDict)
    version: int = FORMAT_VERSION

    def group(self, prefix):
        """Arrays under ``prefix`` with the prefix kept, in file order."""
        return OrderedDict((k, v) for k, v in self.arrays.items() if k.startswith(prefix))

    def __contains__(self, name):
        return name in self.arrays


def encode_checkpoint(config, arrays, version=FORMAT_VERSION):
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, U32.pack(version), U64.pack(len(blob)), blob, U32.pack(len(arrays))]
    for name, value in arrays.items():
        value = np.ascontiguousarray(value, dtype=F64)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or value.ndim > 0xFF:
            raise CheckpointError(f"array '{name}' cannot be stored (name or rank too large)")
        parts += [U16.pack(len(encoded)), encoded, U8.pack(value.ndim)]
        parts += [U32.pack(d) for d in value.shape]
        parts.append(value.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return fmt.unpack(self.take(fmt.size, what))[0]


def decode_checkpoint(data):
    reader = _Reader(data)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.unpack(U32, "version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    blob = reader.take(reader.unpack(U64, "config length"), "config")
    try:
        config = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"embedded config is not valid JSON: {e}") from e

    arrays = OrderedDict()
    for _ in range(reader.unpack(U32, "array count")):
        raw = reader.take(reader.unpack(U16, "name length"), "array name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"array name {raw!r} is not valid UTF-8: {e}") from e
        rank = reader.unpack(U8, f"rank of '{name}'")
        shape = tuple(reader.unpack(U32, f"shape of '{name}'") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(count * F64.itemsize, f"payload of '{name}'")
        arrays[name] = np.frombuffer(payload, dtype=F64).reshape(shape).astype(np.float64)
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the last array")
    return Checkpoint(config=config, arrays=arrays, version=version)


def save_checkpoint(path, config, params):
    data = encode_checkpoint(config, params)
    with open(path, "wb") as f:
        f.write(data)
    logger.info(f"saved checkpoint with {len(params)} arrays to {path} ({len(data)} bytes)")


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    checkpoint = decode_checkpoint(data)
    logger.debug(f"loaded checkpoint {path}: {len(checkpoint.arrays)} arrays")
    return checkpoint
