"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MINDCKPT"                 8 bytes magic
    uint32 version              currently 1
    uint32 tensor_count
    repeated tensor_count times:
        uint32 name_length, name (UTF-8)
        uint32 ndim, ndim x uint32 dims
        float32 payload, row-major, prod(dims) values
    uint64 metadata_length, metadata (UTF-8 JSON, sorted keys)

Saving the result of :func:`load_checkpoint` reproduces the file byte for byte.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, SizeMismatchError

MAGIC = b"MINDCKPT"
VERSION = 1


def _dump_meta(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(tensors, meta):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = _dump_meta(meta)
    parts.append(struct.pack("<Q", len(blob)))
    parts.append(blob)
    return b"".join(parts)


def save_checkpoint(tensors, meta, path):
    """Write ``tensors`` (ordered name -> array) and JSON-able ``meta``."""
    data = checkpoint_bytes(tensors, meta)
    Path(path).write_bytes(data)
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise SizeMismatchError(f"checkpoint truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_checkpoint(data):
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a MIND checkpoint (bad magic)")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I", "name length")
        name = r.take(nlen, "name").decode("utf-8")
        (ndim,) = r.unpack("<I", f"{name} rank")
        dims = r.unpack(f"<{ndim}I", f"{name} shape")
        n = int(np.prod(dims)) if ndim else 1
        payload = r.take(4 * n, f"{name} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    (mlen,) = r.unpack("<Q", "metadata length")
    blob = r.take(mlen, "metadata")
    if r.pos != len(data):
        raise SizeMismatchError(f"{len(data) - r.pos} trailing bytes after metadata")
    try:
        meta = json.loads(blob.decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}") from None
    return tensors, meta


def load_checkpoint(path):
    """Return ``(tensors, meta)``; raises before returning any partial state."""
    return parse_checkpoint(Path(path).read_bytes())
