"""Point cloud files: ASCII ``x y z`` lines and little-endian binary PLY."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .geometry import PointCloud, as_points


class CloudFormatError(ValueError):
    """Base class; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MalformedHeaderError(CloudFormatError):
    pass


class NonFiniteValueError(CloudFormatError):
    pass


class TruncatedPayloadError(CloudFormatError):
    pass


FORMATS = ("xyz_ascii", "ply_binary_le")
_ALIASES = {"xyz": "xyz_ascii", "ply": "ply_binary_le"}
_FLOAT_TYPES = {"float", "float32"}


def _resolve_format(path, fmt):
    if fmt is None:
        fmt = "ply_binary_le" if str(path).lower().endswith(".ply") else "xyz_ascii"
    fmt = _ALIASES.get(fmt, fmt)
    if fmt not in FORMATS:
        raise ValueError(f"unknown cloud format {fmt!r}")
    return fmt


def write_cloud(pc, path, fmt: str | None = None) -> None:
    pts = as_points(pc)
    fmt = _resolve_format(path, fmt)
    if fmt == "xyz_ascii":
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            for x, y, z in pts.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n")
        return
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {pts.shape[0]}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pts.astype("<f4").tobytes())


def read_cloud(path, fmt: str | None = None) -> PointCloud:
    fmt = _resolve_format(path, fmt)
    data = Path(path).read_bytes()
    if fmt == "xyz_ascii":
        return _parse_xyz(data)
    return _parse_ply(data)


def _parse_xyz(data: bytes) -> PointCloud:
    rows = []
    offset = 0
    for line in data.split(b"\n"):
        start = offset
        offset += len(line) + 1
        text = line.strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 3:
            raise MalformedHeaderError(f"expected 3 values per line, got {len(parts)}", start)
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise MalformedHeaderError(f"unparsable number in {text!r}", start) from exc
        if not all(math.isfinite(v) for v in vals):
            raise NonFiniteValueError("non-finite coordinate", start)
        rows.append(vals)
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def _parse_ply(data: bytes) -> PointCloud:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n"):
        raise MalformedHeaderError("missing 'ply' magic", 0)
    if end < 0:
        raise MalformedHeaderError("missing end_header", len(data))
    payload_start = end + len(b"end_header\n")
    lines = data[:end].decode("ascii", errors="replace").split("\n")
    pos = 0
    n_vertex = None
    props: list[str] = []
    current = None
    fmt_seen = False
    for line in lines:
        where = pos
        pos += len(line) + 1
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] != "binary_little_endian":
                raise MalformedHeaderError(f"unsupported format line {line!r}", where)
            fmt_seen = True
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise MalformedHeaderError(f"bad element line {line!r}", where)
            current = tok[1]
            if current == "vertex":
                n_vertex = int(tok[2])
            elif int(tok[2]) != 0:
                raise MalformedHeaderError(f"unsupported non-empty element {current!r}", where)
        elif tok[0] == "property":
            if current == "vertex":
                if len(tok) != 3 or tok[1] not in _FLOAT_TYPES:
                    raise MalformedHeaderError(f"unsupported vertex property {line!r}", where)
                props.append(tok[2])
        else:
            raise MalformedHeaderError(f"unexpected header line {line!r}", where)
    if not fmt_seen:
        raise MalformedHeaderError("missing format line", 0)
    if n_vertex is None or props != ["x", "y", "z"]:
        raise MalformedHeaderError("need a vertex element with float x, y, z", 0)
    need = n_vertex * 12
    have = len(data) - payload_start
    if have < need:
        raise TruncatedPayloadError(f"payload has {have} of {need} bytes", len(data))
    pts = np.frombuffer(data, dtype="<f4", count=n_vertex * 3, offset=payload_start).reshape(-1, 3)
    bad = ~np.isfinite(pts)
    if bad.any():
        first = int(np.flatnonzero(bad.reshape(-1))[0])
        raise NonFiniteValueError("non-finite coordinate", payload_start + 4 * first)
    return PointCloud(pts.astype(np.float64))
