"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"PTCKPT\\x00\\x01"
    version  u32
    count    u32      number of records
    records  count x { u32 name_len, name (utf-8), u8 kind, body }
               kind 0 (json):  u64 len, utf-8 bytes
               kind 1 (array): u8 dtype, u32 ndim, ndim x u64 dims, u64 nbytes, raw bytes
    digest   32 bytes SHA-256 of everything before it

Records are written in a fixed order: ``config``, ``state``, then
``param/<name>``, ``adam.m/<name>``, ``adam.v/<name>`` in model order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTCKPT\x00\x01"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class DigestMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


class UnknownParameterError(CheckpointError):
    pass


def _write_record(buf, name: str, value) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    if isinstance(value, np.ndarray):
        arr = np.ascontiguousarray(value)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        buf.write(struct.pack("<BBI", 1, _CODES[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body = arr.astype(dt, copy=False).tobytes()
        buf.write(struct.pack("<Q", len(body)))
        buf.write(body)
    else:
        body = json.dumps(value, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<BQ", 0, len(body)))
        buf.write(body)


def encode(records: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(records)))
    for name, value in records.items():
        _write_record(buf, name, value)
    payload = buf.getvalue()
    return payload + hashlib.sha256(payload).digest()


def decode(blob: bytes) -> dict:
    if len(blob) < len(MAGIC) + 8 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    payload, digest = blob[:-32], blob[-32:]
    (version, count) = struct.unpack_from("<II", payload, len(MAGIC))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    if hashlib.sha256(payload).digest() != digest:
        raise DigestMismatchError("checkpoint digest mismatch (file corrupted)")
    pos = len(MAGIC) + 8
    out: dict = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            name = payload[pos:pos + n].decode("utf-8")
            pos += n
            (kind,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            if kind == 0:
                (ln,) = struct.unpack_from("<Q", payload, pos)
                pos += 8
                out[name] = json.loads(payload[pos:pos + ln].decode("utf-8"))
                pos += ln
            elif kind == 1:
                code, ndim = struct.unpack_from("<BI", payload, pos)
                pos += 5
                shape = struct.unpack_from(f"<{ndim}Q", payload, pos)
                pos += 8 * ndim
                (nb,) = struct.unpack_from("<Q", payload, pos)
                pos += 8
                arr = np.frombuffer(payload, dtype=_DTYPES[code], count=nb // _DTYPES[code].itemsize, offset=pos)
                out[name] = arr.reshape(shape).copy()
                pos += nb
            else:
                raise CheckpointError(f"unknown record kind {kind} for {name!r}")
    except (struct.error, KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt record table at byte {pos}") from exc
    return out


def save_checkpoint(path, model, optimizer=None, state: dict | None = None, train_config=None) -> None:
    """Serialize parameters, optimizer moments and trainer state (step, RNG states)."""
    records: dict = {"config": dataclasses.asdict(model.cfg)}
    st = dict(state or {})
    if train_config is not None:
        st["train_config"] = dataclasses.asdict(train_config)
    if optimizer is not None:
        st["adam_t"] = optimizer.t
    records["state"] = st
    for name, p in model.named_parameters():
        records[f"param/{name}"] = p.data
    if optimizer is not None:
        for name, _ in model.named_parameters():
            if name in optimizer.m:
                records[f"adam.m/{name}"] = optimizer.m[name]
                records[f"adam.v/{name}"] = optimizer.v[name]
    Path(path).write_bytes(encode(records))


def read_checkpoint(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    return decode(p.read_bytes())


def load_checkpoint(path, model, optimizer=None) -> dict:
    """Restore into ``model`` (and ``optimizer``); returns the saved trainer state."""
    rec = read_checkpoint(path)
    saved = rec.get("config", {})
    current = dataclasses.asdict(model.cfg)
    diff = sorted(k for k in set(saved) | set(current) if saved.get(k) != current.get(k))
    if diff:
        detail = ", ".join(f"{k}: {saved.get(k)!r} != {current.get(k)!r}" for k in diff)
        raise ConfigMismatchError(f"checkpoint config differs from model: {detail}")
    params = dict(model.named_parameters())
    for key in rec:
        if key.startswith(("param/", "adam.m/", "adam.v/")):
            name = key.split("/", 1)[1]
            if name not in params:
                raise UnknownParameterError(f"checkpoint has unknown parameter {name!r}")
    for name, p in params.items():
        key = f"param/{name}"
        if key not in rec:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = rec[key]
        if arr.shape != p.shape:
            raise ConfigMismatchError(f"parameter {name!r} has shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(p.dtype)
    state = rec.get("state", {})
    if optimizer is not None:
        optimizer.m = {n: rec[f"adam.m/{n}"] for n in params if f"adam.m/{n}" in rec}
        optimizer.v = {n: rec[f"adam.v/{n}"] for n in params if f"adam.v/{n}" in rec}
        optimizer.t = int(state.get("adam_t", 0))
    return state
