"""Binary parameter checkpoints.

Layout (all integers u32 little-endian, all values f32 little-endian)::

    b"YNCKPT1\\0"
    parameter section:  count, then per entry: name_len, utf-8 name, rank, extents..., values
    optimizer section:  same layout; entries "<name>.m", "<name>.v", "<name>.step"
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from ..errors import ConfigError, DataError
from .tensor import Parameter

MAGIC = b"YNCKPT1\x00"


def _write_section(fh: BinaryIO, entries: Mapping[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError("checkpoint is truncated")
    return buf


def _read_section(fh: BinaryIO) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
        name = _read_exact(fh, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(fh, 4))
        shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank)) if rank else ()
        size = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(_read_exact(fh, 4 * size), dtype="<f4").reshape(shape)
        out[name] = values.astype(np.float32)
    return out


def save_checkpoint(path, params: Mapping[str, Parameter]) -> None:
    state: dict[str, np.ndarray] = {}
    for name, p in params.items():
        state[f"{name}.m"] = p.m
        state[f"{name}.v"] = p.v
        state[f"{name}.step"] = np.asarray(p.step, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_section(fh, {name: p.data for name, p in params.items()})
        _write_section(fh, state)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Return ``(parameters, optimizer_state)`` as name -> float32 array."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic bytes)")
        params = _read_section(fh)
        state = _read_section(fh)
    return params, state


def load_into(path, params: Mapping[str, Parameter]) -> None:
    """Load a checkpoint into existing parameters, checking names and shapes."""
    values, state = read_checkpoint(Path(path))
    if set(values) != set(params):
        missing = sorted(set(params) - set(values))
        extra = sorted(set(values) - set(params))
        raise ConfigError(f"checkpoint/model mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, p in params.items():
        arr = values[name]
        if arr.shape != p.shape:
            raise ConfigError(f"checkpoint/model mismatch for {name}: {arr.shape} vs {p.shape}")
        p.data = arr.astype(p.dtype)
        if f"{name}.m" in state:
            p.m = state[f"{name}.m"].astype(p.dtype)
            p.v = state[f"{name}.v"].astype(p.dtype)
            p.step = int(state[f"{name}.step"])
