"""Binary weight archive.

Layout (all integers little-endian)::

    b"FNL1"
    u32   entry count
    per entry:
        u16   name length in bytes
        bytes UTF-8 name
        u8    rank
        u32   dim, repeated rank times
        f32   raw values, row-major
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"FNL1"


class ArchiveFormatError(ValueError):
    """The file is not a well-formed weight archive."""


class ArchiveLoadError(KeyError):
    """Archive contents do not match the model they are loaded into."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


def atomic_write_bytes(path, payload: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(tensors) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"cannot encode entry {name!r}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ArchiveFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ArchiveFormatError("archive truncated")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveFormatError("entry name is not valid UTF-8") from exc
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        if name in out:
            raise ArchiveFormatError(f"duplicate entry {name!r}")
        out[name] = data.astype(np.float32)
    if pos != len(buf):
        raise ArchiveFormatError(f"{len(buf) - pos} trailing bytes after last entry")
    return out


def write_archive(path, tensors):
    atomic_write_bytes(path, encode(tensors))


def read_archive(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def save_weights(model, path):
    """Write all trainable parameters and buffers of ``model``."""
    write_archive(path, model.state_dict())


def load_weights(model, path, require_prefix: str | None = None):
    """Load an archive into ``model`` in place.

    Partial archives are allowed: entries absent from the file keep their
    current values. Every entry in the file must name an existing tensor with
    identical dims. With ``require_prefix``, every model tensor under that
    prefix must be present. Validation completes before any tensor is touched.
    """
    entries = read_archive(path)
    state = model.state_dict()
    unknown = sorted(n for n in entries if n not in state)
    mismatched = sorted(
        f"{n} (archive {list(a.shape)} vs model {list(state[n].shape)})"
        for n, a in entries.items()
        if n in state and a.shape != state[n].shape
    )
    missing = []
    if require_prefix is not None:
        missing = sorted(n for n in state if n.startswith(require_prefix) and n not in entries)
    problems = []
    if unknown:
        problems.append("unknown: " + ", ".join(unknown))
    if mismatched:
        problems.append("dims mismatch: " + ", ".join(mismatched))
    if missing:
        problems.append("missing: " + ", ".join(missing))
    if problems:
        raise ArchiveLoadError(f"cannot load {os.fspath(path)}: " + "; ".join(problems))
    for name, arr in entries.items():
        state[name][...] = arr
    return sorted(entries)
