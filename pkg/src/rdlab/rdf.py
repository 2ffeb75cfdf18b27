"""RDF1 snapshot files and slab directories.

Layout (all little-endian)::

    12 bytes  magic  b"RDF1SNAPSHOT"
     4 bytes  int32  format version (1)
    12 bytes  int32 x 3   N, P, n
    24 bytes  float64 x 3 L, nu, t
    P * n^N   float64     species arrays, C order
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .grid import GridSpec, SpaceTimeSlab, SpeciesField

MAGIC = b"RDF1SNAPSHOT"
VERSION = 1
_PREFIX = struct.Struct("<12si")
_HEADER = struct.Struct("<iiiddd")
SNAP_GLOB = "snap_*.rdf"


class FormatError(ValueError):
    pass


def encode(field, nu):
    g = field.grid
    head = _PREFIX.pack(MAGIC, VERSION) + _HEADER.pack(g.N, field.P, g.n, g.L, float(nu), field.t)
    body = np.ascontiguousarray(field.data, dtype="<f8").tobytes(order="C")
    return head + body


def decode(buf):
    if len(buf) < _PREFIX.size + _HEADER.size:
        raise FormatError("file too short for an RDF1 header")
    magic, version = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported RDF1 version {version}")
    N, P, n, L, nu, t = _HEADER.unpack_from(buf, _PREFIX.size)
    grid = GridSpec(N, n, L)
    off = _PREFIX.size + _HEADER.size
    count = P * n**N
    if len(buf) != off + 8 * count:
        raise FormatError(f"payload has {len(buf) - off} bytes, expected {8 * count}")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(float).reshape((P,) + grid.shape)
    return SpeciesField(grid, data, t), nu


def write_snapshot(path, field, nu):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(field, nu))
    os.replace(tmp, path)


def read_snapshot(path):
    return decode(Path(path).read_bytes())


def snapshot_name(i):
    return f"snap_{i:05d}.rdf"


def write_slab(directory, slab, nu=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nu = slab.nu if nu is None else nu
    paths = []
    for i, s in enumerate(slab):
        p = directory / snapshot_name(i)
        write_snapshot(p, s, nu)
        paths.append(p)
    return paths


def slab_files(directory):
    directory = Path(directory)
    if (directory / "snapshots").is_dir():
        directory = directory / "snapshots"
    files = sorted(directory.glob(SNAP_GLOB))
    if not files:
        raise FileNotFoundError(f"no RDF1 snapshots in {directory}")
    return files


def read_slab(directory):
    fields, nus = [], []
    for p in slab_files(directory):
        f, nu = read_snapshot(p)
        fields.append(f)
        nus.append(nu)
    return SpaceTimeSlab(fields, nu=nus[0])
