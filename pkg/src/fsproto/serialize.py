"""Bit-exact binary artifacts: fixed-embedding tables and checkpoints.

Fixed-embedding file: magic "FSEB", little-endian u32 version=1, u32 count,
u32 dim, then count*dim little-endian float32 values in row order.

Checkpoint file: magic "FSCK", little-endian u32 version=1, u32 d, u32 vocab
size, then named blocks, each u32 name length + UTF-8 name + u32 element
count + float32 little-endian values.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

FSEB_MAGIC = b"FSEB"
FSCK_MAGIC = b"FSCK"
FORMAT_VERSION = 1


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_fixed_embeddings(path, vectors: np.ndarray) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise FormatError("fixed embeddings must be a 2-d array")
    count, dim = vectors.shape
    payload = FSEB_MAGIC + struct.pack("<III", FORMAT_VERSION, count, dim) + vectors.tobytes()
    atomic_write_bytes(path, payload)


def read_fixed_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != FSEB_MAGIC:
        raise FormatError(f"{path}: missing FSEB magic")
    version, count, dim = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 16 + 4 * count * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {count}x{dim}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=16)
    return data.reshape(count, dim).copy()


def write_checkpoint(path, d: int, vocab_size: int, params: dict[str, np.ndarray]) -> None:
    chunks = [FSCK_MAGIC, struct.pack("<III", FORMAT_VERSION, d, vocab_size)]
    for name in sorted(params):
        values = np.ascontiguousarray(params[name], dtype="<f4").ravel()
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", values.size))
        chunks.append(values.tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def read_checkpoint(path) -> tuple[int, int, dict[str, np.ndarray]]:
    """Returns (d, vocab_size, flat float32 blocks keyed by parameter name)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != FSCK_MAGIC:
        raise FormatError(f"{path}: missing FSCK magic")
    version, d, vocab_size = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    params: dict[str, np.ndarray] = {}
    offset = 16
    while offset < len(raw):
        if offset + 4 > len(raw):
            raise FormatError(f"{path}: truncated block header")
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        end = offset + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated values for block {name!r}")
        params[name] = np.frombuffer(raw, dtype="<f4", offset=offset, count=count).copy()
        offset = end
    return d, vocab_size, params
