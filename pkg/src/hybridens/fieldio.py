"""Binary field files: a short text header followed by raw float64 data.

Layout::

    HYBRIDENS-FIELD 1
    endianness little
    dtype float64
    n_times 3
    n_vars 1
    n_lat 4
    n_lon 8
    time_start 501
    variables t
    end
    <payload>

The payload is little-endian float64 regardless of the host byte order,
ordered time, variable, latitude, longitude (row-major, longitude fastest),
so each time slice holds ``n_vars * n_lat * n_lon * 8`` bytes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["FieldFile", "FieldFormatError", "FORMAT_VERSION", "write_field", "read_field"]

MAGIC = "HYBRIDENS-FIELD"
FORMAT_VERSION = 1
_MAX_HEADER = 64 * 1024
_INT_KEYS = ("n_times", "n_vars", "n_lat", "n_lon", "time_start")


class FieldFormatError(ValueError):
    pass


@dataclass
class FieldFile:
    """``values`` has shape (n_times, n_vars, n_lat, n_lon)."""

    values: np.ndarray
    variables: tuple
    time_start: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 3:
            self.values = self.values[None]
        self.variables = tuple(str(v) for v in self.variables)
        if self.values.ndim != 4:
            raise ValueError(f"field values must be (n_times, n_vars, n_lat, n_lon), got {self.values.shape}")
        if len(self.variables) != self.values.shape[1]:
            raise ValueError(f"{len(self.variables)} variable names for {self.values.shape[1]} variables")
        for v in self.variables:
            if not v or any(c.isspace() for c in v):
                raise ValueError(f"variable names must be non-empty without whitespace, got {v!r}")

    @property
    def shape(self) -> tuple:
        return self.values.shape


def _header(ff: FieldFile) -> bytes:
    n_times, n_vars, n_lat, n_lon = ff.values.shape
    lines = [
        f"{MAGIC} {FORMAT_VERSION}",
        "endianness little",
        "dtype float64",
        f"n_times {n_times}",
        f"n_vars {n_vars}",
        f"n_lat {n_lat}",
        f"n_lon {n_lon}",
        f"time_start {int(ff.time_start)}",
        "variables " + " ".join(ff.variables),
        "end",
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_field(path, ff: FieldFile) -> None:
    data = np.ascontiguousarray(ff.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_header(ff))
        fh.write(data.tobytes())


def _parse_header(raw: bytes, path) -> tuple[dict, int]:
    end = raw.find(b"\nend\n", 0, _MAX_HEADER)
    if not raw.startswith(MAGIC.encode()) or end < 0:
        raise FieldFormatError(f"{path}: not a field file (missing header)")
    text = raw[:end].decode("ascii")
    lines = text.split("\n")
    magic, _, version = lines[0].partition(" ")
    if version.strip() != str(FORMAT_VERSION):
        raise FieldFormatError(f"{path}: unsupported field file version {version.strip()!r}, expected {FORMAT_VERSION}")
    meta = {}
    for line in lines[1:]:
        key, _, value = line.partition(" ")
        meta[key] = value
    for key in _INT_KEYS + ("endianness", "dtype", "variables"):
        if key not in meta:
            raise FieldFormatError(f"{path}: header is missing {key!r}")
    if meta["endianness"] != "little" or meta["dtype"] != "float64":
        raise FieldFormatError(f"{path}: unsupported payload {meta['dtype']} / {meta['endianness']}")
    try:
        for key in _INT_KEYS:
            meta[key] = int(meta[key])
    except ValueError as exc:
        raise FieldFormatError(f"{path}: malformed header value ({exc})") from None
    meta["variables"] = tuple(meta["variables"].split())
    return meta, end + len(b"\nend\n")


def read_field(path) -> FieldFile:
    raw = Path(path).read_bytes()
    meta, offset = _parse_header(raw, path)
    shape = (meta["n_times"], meta["n_vars"], meta["n_lat"], meta["n_lon"])
    expected = int(np.prod(shape)) * 8
    got = len(raw) - offset
    if got < expected:
        raise FieldFormatError(f"{path}: truncated payload, expected {expected} bytes, found {got}")
    if got > expected:
        raise FieldFormatError(f"{path}: {got - expected} unexpected trailing bytes after payload")
    values = np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)), offset=offset)
    return FieldFile(values.astype(np.float64).reshape(shape), meta["variables"], meta["time_start"])
