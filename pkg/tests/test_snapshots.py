import struct

import numpy as np
import pytest

from dnls.errors import DomainError
from dnls.grid import GridSpec
from dnls.snapshots import MAGIC, read_snapshot, write_snapshot

from conftest import band_limited_random


def test_snapshot_roundtrip(tmp_path):
    spec = GridSpec(3, 16, 5.0)
    field = band_limited_random(spec, seed=4)
    path = tmp_path / "state.dnls"
    write_snapshot(path, field, 1.25)
    loaded, t = read_snapshot(path)
    assert t == 1.25
    assert loaded.spec == spec
    assert np.array_equal(loaded.values, field.values)


def test_snapshot_header_layout(tmp_path):
    spec = GridSpec(2, 16, 3.0)
    field = band_limited_random(spec, seed=1)
    path = tmp_path / "state.dnls"
    write_snapshot(path, field, 0.5)
    raw = path.read_bytes()
    header_size = struct.calcsize("<4sIIIdd")
    magic, version, dim, n, length, time = struct.unpack("<4sIIIdd", raw[:header_size])
    assert magic == MAGIC
    assert (version, dim, n) == (1, 2, 16)
    assert (length, time) == (3.0, 0.5)
    # payload is interleaved (re, im) float64 pairs in row-major order
    pairs = np.frombuffer(raw[header_size:], dtype="<f8").reshape(-1, 2)
    flat = field.values.reshape(-1)
    assert np.array_equal(pairs[:, 0], flat.real)
    assert np.array_equal(pairs[:, 1], flat.imag)


def test_snapshot_rejects_corruption(tmp_path):
    spec = GridSpec(1, 16, 2.0)
    field = band_limited_random(spec, seed=2)
    path = tmp_path / "state.dnls"
    write_snapshot(path, field, 0.0)
    raw = bytearray(path.read_bytes())

    truncated = tmp_path / "short.dnls"
    truncated.write_bytes(bytes(raw[:40]))
    with pytest.raises(DomainError):
        read_snapshot(truncated)

    raw[0:4] = b"XXXX"
    bad_magic = tmp_path / "bad.dnls"
    bad_magic.write_bytes(bytes(raw))
    with pytest.raises(DomainError):
        read_snapshot(bad_magic)
