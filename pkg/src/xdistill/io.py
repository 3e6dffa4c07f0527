"""Named-tensor checkpoints, line-delimited metrics and atomic file writes.

Checkpoint layout (all integers little-endian)::

    magic    4 bytes  b"NTCK"
    version  u32
    count    u32
    count x:
        name_len u32, name utf-8 bytes
        rank     u32
        dims     rank x u64
        payload  prod(dims) x float64
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"NTCK"
FORMAT_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_checkpoint(tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]) -> bytes:
    items = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(items)))
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ValueError("not a named-tensor checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", data, off)
        off += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(dims)
        off += 8 * n
        out[name] = arr
    if off != len(data):
        raise ValueError("trailing bytes after the last tensor")
    return out


def save_checkpoint(path, model) -> None:
    """Write every named parameter of ``model`` in declaration order."""
    atomic_write_bytes(path, encode_checkpoint((n, t.data) for n, t in model.named_parameters()))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def load_into(model, tensors: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint values into ``model``'s parameters (names and shapes must match)."""
    params = dict(model.named_parameters())
    missing = set(params) - set(tensors)
    extra = set(tensors) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
    for name, t in params.items():
        arr = tensors[name]
        if arr.shape != t.shape:
            raise ValueError(f"{name}: checkpoint shape {list(arr.shape)} vs model {list(t.shape)}")
        t.data = np.array(arr, dtype=np.float64)


class MetricsWriter:
    """Appends one JSON object per line; buffered and flushed atomically on close."""

    def __init__(self, path):
        self.path = Path(path)
        self.lines: list[str] = []

    def write(self, record: Mapping) -> None:
        self.lines.append(json.dumps(dict(record), sort_keys=False))

    def close(self) -> None:
        atomic_write_text(self.path, "".join(line + "\n" for line in self.lines))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
