"""icecube v1 file format.

Layout::

    b"ICECUBE\\0"                 8-byte magic
    uint64 little-endian          header length in bytes
    UTF-8 JSON header             kind, shape, dtype, grid, epoch, coordinates, meta
    float32 little-endian payload row-major values, NaN on land

A hindcast payload has shape (init, lead, member, lat, lon); an obs payload
is the monthly record (month, lat, lon).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..grid import PolarGrid
from .cubes import EPOCH_YEAR, HindcastCube, ObsCube

MAGIC = b"ICECUBE\0"
FORMAT_VERSION = 1
_DTYPE = "<f4"


class CubeFormatError(ValueError):
    pass


class MalformedHeaderError(CubeFormatError):
    pass


class TruncatedPayloadError(CubeFormatError):
    pass


class VersionMismatchError(CubeFormatError):
    pass


def _header(cube) -> tuple[dict, np.ndarray]:
    head = {
        "format": "icecube",
        "version": FORMAT_VERSION,
        "dtype": _DTYPE,
        "epoch": f"{EPOCH_YEAR:04d}-01",
        "grid": cube.grid.to_dict(),
        "inits": cube.inits.tolist(),
        "meta": cube.meta,
    }
    if isinstance(cube, HindcastCube):
        head["kind"] = "hindcast"
        head["dims"] = ["init", "lead", "member", "lat", "lon"]
        payload = cube.values
    elif isinstance(cube, ObsCube):
        head["kind"] = "obs"
        head["dims"] = ["month", "lat", "lon"]
        head["months"] = cube.months.tolist()
        head["n_lead"] = cube.n_lead
        payload = cube.monthly
    else:
        raise TypeError(f"cannot serialize {type(cube).__name__}")
    head["shape"] = list(payload.shape)
    return head, payload


def write_cube(cube, path) -> Path:
    path = Path(path)
    head, payload = _header(cube)
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(payload, dtype=_DTYPE).tobytes(order="C"))
    return path


def read_header(path) -> tuple[dict, int]:
    """Return the parsed header and the byte offset of the payload."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise MalformedHeaderError(f"{path}: not an icecube file (bad magic)")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise MalformedHeaderError(f"{path}: missing header length")
        (n,) = struct.unpack("<Q", raw_len)
        blob = fh.read(n)
    if len(blob) != n:
        raise MalformedHeaderError(f"{path}: header shorter than its declared length")
    try:
        head = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(head, dict) or head.get("format") != "icecube":
        raise MalformedHeaderError(f"{path}: header does not describe an icecube")
    if head.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: version {head.get('version')!r}, expected {FORMAT_VERSION}")
    for key in ("kind", "shape", "grid", "inits", "dtype"):
        if key not in head:
            raise MalformedHeaderError(f"{path}: header lacks {key!r}")
    if head["dtype"] != _DTYPE:
        raise MalformedHeaderError(f"{path}: unsupported dtype {head['dtype']!r}")
    return head, len(MAGIC) + 8 + n


def read_cube(path):
    head, offset = read_header(path)
    shape = tuple(int(s) for s in head["shape"])
    count = int(np.prod(shape))
    with open(path, "rb") as fh:
        fh.seek(offset)
        raw = fh.read()
    if len(raw) < count * 4:
        raise TruncatedPayloadError(f"{path}: truncated payload ({len(raw)} of {count * 4} bytes)")
    if len(raw) > count * 4:
        raise MalformedHeaderError(f"{path}: {len(raw) - count * 4} trailing bytes after payload")
    values = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float32)
    try:
        grid = PolarGrid.from_dict(head["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedHeaderError(f"{path}: bad grid descriptor ({exc})") from exc
    meta = head.get("meta", {})
    if head["kind"] == "hindcast":
        return HindcastCube(head["inits"], values, grid, meta)
    if head["kind"] == "obs":
        return ObsCube(head["inits"], head["months"], values, grid, int(head.get("n_lead", 12)), meta)
    raise MalformedHeaderError(f"{path}: unknown cube kind {head['kind']!r}")
