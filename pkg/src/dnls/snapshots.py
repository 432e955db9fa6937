"""Binary field snapshot format.

Layout (little-endian): magic ``DNLS``, version u32, dim u32, n_per_axis u32,
half-length f64, time f64, then the payload as interleaved (re, im) float64
pairs in row-major point order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DomainError
from .grid import Field, GridSpec

MAGIC = b"DNLS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def write_snapshot(path: str | Path, field: Field, time: float) -> None:
    spec = field.spec
    header = _HEADER.pack(MAGIC, VERSION, spec.dim, spec.n, spec.length, float(time))
    payload = np.ascontiguousarray(field.values, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_snapshot(path: str | Path) -> tuple[Field, float]:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise DomainError(f"{path}: truncated snapshot header")
        magic, version, dim, n, length, time = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise DomainError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise DomainError(f"{path}: unsupported snapshot version {version}")
        spec = GridSpec(dim, n, length)
        payload = fh.read(16 * spec.size)
        if len(payload) != 16 * spec.size:
            raise DomainError(f"{path}: truncated snapshot payload")
    values = np.frombuffer(payload, dtype="<c16").reshape(spec.shape)
    return Field(values.copy(), spec), float(time)
