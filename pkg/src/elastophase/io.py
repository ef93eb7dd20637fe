"""Binary field container and small CSV/JSON helpers.

Container layout (little endian): 4-byte magic ``EPHF``, uint32 version,
uint32 nx, uint32 ny, float64 lx, float64 ly, uint32 component count,
then ``(nx+1) * (ny+1) * ncomp`` float64 values in row-major order of an
array shaped ``(nx+1, ny+1, ncomp)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct

import numpy as np

from .fields import Grid

MAGIC = b"EPHF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIddI")


class ContainerError(ValueError):
    pass


def write_field(path, grid: Grid, values) -> None:
    values = np.asarray(values, dtype="<f8")
    if values.ndim == 2:
        values = values[..., None]
    if values.shape[:2] != grid.node_shape:
        raise ContainerError("field does not match grid nodes")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.nx, grid.ny, grid.lx, grid.ly, values.shape[2]))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_field(path) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ContainerError(f"{path}: truncated header")
        magic, version, nx, ny, lx, ly, ncomp = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported container version {version}")
        grid = Grid(nx, ny, lx, ly)
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = (nx + 1) * (ny + 1) * ncomp
    if data.size != expected:
        raise ContainerError(f"{path}: expected {expected} values, found {data.size}")
    return grid, data.reshape(nx + 1, ny + 1, ncomp).astype(float)


def write_rows_csv(path, columns, rows, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in v)
    return v


def content_hash(*chunks) -> str:
    """SHA-256 over canonical JSON / raw bytes of the given inputs."""
    h = hashlib.sha256()
    for c in chunks:
        if isinstance(c, (bytes, bytearray)):
            h.update(c)
        else:
            h.update(json.dumps(c, sort_keys=True).encode())
    return h.hexdigest()


def _np_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_np_default)
        fh.write("\n")
