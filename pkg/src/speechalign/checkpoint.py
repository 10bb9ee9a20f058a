"""Binary checkpoint format shared by the LM and the encoder.

Layout (little-endian): magic "ACLC", u32 version=1, u32 length-prefixed
UTF-8 JSON metadata block (kind, config echo, training step), then a
tensor table sorted by name (u32 name length, name bytes, u32 rank,
u32 dims, float32 row-major data), and a trailing CRC32 over every
preceding byte.
"""

import hashlib
import json
import struct
import zlib

import numpy as np

from .errors import FormatError

MAGIC = b"ACLC"
VERSION = 1


def save_checkpoint(path, kind: str, config: dict, tensors: dict[str, np.ndarray], step: int) -> None:
    meta = json.dumps({"kind": kind, "config": config, "step": int(step)}).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta)), meta]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(blob)
        f.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (metadata, tensors); tensors come back as float64 arrays."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise FormatError("checkpoint truncated before header", offset=len(blob))
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            offset=len(blob) - 4,
        )
    (meta_len,) = struct.unpack("<I", blob[8:12])
    offset = 12
    end = len(blob) - 4
    if offset + meta_len > end:
        raise FormatError("metadata block overruns the file", offset=offset)
    try:
        meta = json.loads(blob[offset : offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata block is not valid JSON: {exc}", offset=offset) from exc
    offset += meta_len
    tensors: dict[str, np.ndarray] = {}
    while offset < end:
        offset, name, arr = _read_tensor(blob, offset, end)
        tensors[name] = arr
    return meta, tensors


def _read_tensor(blob: bytes, offset: int, end: int) -> tuple[int, str, np.ndarray]:
    def need(n: int):
        if offset + n > end:
            raise FormatError("tensor table truncated", offset=offset)

    need(4)
    (name_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    need(name_len)
    name = blob[offset : offset + name_len].decode("utf-8")
    offset += name_len
    need(4)
    (rank,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    need(4 * rank)
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    count = 1
    for d in dims:
        count *= d
    need(4 * count)
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims)
    offset += 4 * count
    return offset, name, arr.astype(np.float64)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def tensors_sha256(tensors) -> str:
    """Order-independent digest of named arrays (accepts Tensor or ndarray values)."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        value = tensors[name]
        arr = value.data if hasattr(value, "requires_grad") else value
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()
