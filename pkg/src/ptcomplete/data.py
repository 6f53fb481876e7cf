"""Synthetic primitive pairs and manifest-based datasets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import PointCloud

SHAPES = ("sphere", "box", "cylinder", "cone", "torus")
KEEP_FRACTIONS = (0.25, 0.5, 0.75)
# crop difficulty by retained fraction
MODES = {"easy": 0.75, "median": 0.5, "hard": 0.25}

DEFAULT_PARAMS = {
    "sphere": {"radius": 1.0},
    "box": {"size_x": 1.0, "size_y": 0.7, "size_z": 0.4},
    "cylinder": {"radius": 0.5, "height": 1.2},
    "cone": {"radius": 0.6, "height": 1.2},
    "torus": {"major": 0.8, "minor": 0.3},
}


class DataError(ValueError):
    pass


@dataclass
class SamplePair:
    partial: PointCloud
    complete: PointCloud
    category: str
    id: str
    keep_fraction: float | None = None
    meta: dict = field(default_factory=dict)


def _unit_vectors(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _pick_parts(areas, n, rng):
    areas = np.asarray(areas, dtype=np.float64)
    return rng.choice(len(areas), size=n, p=areas / areas.sum())


def sample_surface(shape: str, n: int, rng: np.random.Generator, params: dict | None = None) -> np.ndarray:
    """Area-uniform samples on the surface of a primitive, ``[n, 3]``."""
    if n < 1:
        raise DataError("need at least one surface point")
    p = dict(DEFAULT_PARAMS.get(shape, {}))
    p.update(params or {})
    if shape == "sphere":
        if p["radius"] <= 0:
            raise DataError("sphere radius must be positive")
        return _unit_vectors(n, rng) * p["radius"]
    if shape == "box":
        a, b, c = p["size_x"] / 2, p["size_y"] / 2, p["size_z"] / 2
        if min(a, b, c) <= 0:
            raise DataError("box sizes must be positive")
        faces = _pick_parts([b * c, b * c, a * c, a * c, a * b, a * b], n, rng)
        uv = rng.uniform(-1, 1, size=(n, 2))
        out = np.empty((n, 3))
        half = np.array([a, b, c])
        for f in range(6):
            m = faces == f
            ax, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
            others = [i for i in range(3) if i != ax]
            out[m, ax] = sign * half[ax]
            out[m, others[0]] = uv[m, 0] * half[others[0]]
            out[m, others[1]] = uv[m, 1] * half[others[1]]
        return out
    if shape == "cylinder":
        r, h = p["radius"], p["height"]
        if r <= 0 or h <= 0:
            raise DataError("cylinder radius and height must be positive")
        part = _pick_parts([2 * math.pi * r * h, math.pi * r * r, math.pi * r * r], n, rng)
        theta = rng.uniform(0, 2 * math.pi, n)
        rad = np.where(part == 0, r, r * np.sqrt(rng.uniform(0, 1, n)))
        z = np.where(part == 0, rng.uniform(-h / 2, h / 2, n), np.where(part == 1, h / 2, -h / 2))
        return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
    if shape == "cone":
        r, h = p["radius"], p["height"]
        if r <= 0 or h <= 0:
            raise DataError("cone radius and height must be positive")
        part = _pick_parts([math.pi * r * math.hypot(r, h), math.pi * r * r], n, rng)
        theta = rng.uniform(0, 2 * math.pi, n)
        t = np.sqrt(rng.uniform(0, 1, n))  # fraction of the way from apex (lateral) / from center (base)
        rad = r * t
        z = np.where(part == 0, h / 2 - h * t, -h / 2)
        return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
    if shape == "torus":
        R, r = p["major"], p["minor"]
        if r <= 0 or R <= 0 or r >= R:
            raise DataError(f"torus needs 0 < minor < major, got minor={r} major={R}")
        out = np.empty((0, 2))
        while out.shape[0] < n:
            u = rng.uniform(0, 2 * math.pi, 2 * n)
            v = rng.uniform(0, 2 * math.pi, 2 * n)
            ok = rng.uniform(0, R + r, 2 * n) < R + r * np.cos(v)
            out = np.concatenate([out, np.stack([u[ok], v[ok]], axis=1)])
        u, v = out[:n, 0], out[:n, 1]
        ring = R + r * np.cos(v)
        return np.stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)], axis=1)
    raise DataError(f"unknown primitive {shape!r}")


def _float32_exact(pc: PointCloud) -> PointCloud:
    """Round to float32 values so the engine cast and PLY storage are lossless."""
    return PointCloud(pc.points.astype(np.float32).astype(np.float64))


def _crop_pair(complete, shape, n_partial, rng, keep_fraction, sample_id) -> SamplePair:
    direction = _unit_vectors(1, rng)[0]
    if keep_fraction is None:
        keep_fraction = float(rng.choice(KEEP_FRACTIONS))
    crop = geometry.halfspace_crop(complete, direction, keep_fraction)
    normed, center, scale = geometry.normalize_cloud(complete)
    crop_n = geometry.apply_normalization(crop, center, scale)
    partial = geometry.resample(crop_n, n_partial, rng)
    return SamplePair(
        _float32_exact(partial),
        _float32_exact(normed),
        shape,
        sample_id,
        keep_fraction,
        {"direction": direction.tolist(), "crop_count": crop.count},
    )


def gen_synthetic_pair(
    shape: str,
    params: dict | None,
    n_partial: int,
    n_complete: int,
    seed: int,
    keep_fraction: float | None = None,
    sample_id: str | None = None,
) -> SamplePair:
    """Complete surface sample plus a half-space crop of it, both in the complete cloud's normalized frame."""
    if n_partial < 1 or n_complete < 1:
        raise DataError("point counts must be positive")
    rng = np.random.default_rng(seed)
    complete = sample_surface(shape, n_complete, rng, params)
    return _crop_pair(complete, shape, n_partial, rng, keep_fraction, sample_id or f"{shape}-{seed}")


def gen_crop_set(shape: str, n_crops: int, n_partial: int, n_complete: int, seed: int,
                 params: dict | None = None) -> list[SamplePair]:
    """Several crops of one complete sample. Keep fractions cycle through ``KEEP_FRACTIONS``."""
    if n_crops < 1 or n_partial < 1 or n_complete < 1:
        raise DataError("crop and point counts must be positive")
    rng = np.random.default_rng(seed)
    complete = sample_surface(shape, n_complete, rng, params)
    return [
        _crop_pair(complete, shape, n_partial, rng, KEEP_FRACTIONS[i % len(KEEP_FRACTIONS)], f"{shape}-crop{i}")
        for i in range(n_crops)
    ]


@dataclass
class SampleDescriptor:
    id: str
    category: str
    partial_path: Path
    complete_path: Path
    mode: str | None = None

    def load(self) -> SamplePair:
        from .cloud_io import read_cloud

        return SamplePair(read_cloud(self.partial_path), read_cloud(self.complete_path), self.category, self.id,
                          MODES.get(self.mode) if self.mode else None)


def load_manifest(path) -> list[SampleDescriptor]:
    """Read a JSON-lines manifest of ``{"id", "category", "partial", "complete"[, "mode"]}``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    out: list[SampleDescriptor] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid, cat = str(rec["id"]), str(rec["category"])
                part, comp = rec["partial"], rec["complete"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed manifest record") from exc
            if sid in seen:
                raise DataError(f"duplicate sample id {sid!r} in {path}")
            seen.add(sid)
            desc = SampleDescriptor(sid, cat, base / part, base / comp, rec.get("mode"))
            for cloud in (desc.partial_path, desc.complete_path):
                if not cloud.exists():
                    raise DataError(f"{path}:{lineno}: sample {sid!r} references missing file {cloud}")
            out.append(desc)
    return out


def write_manifest(path, descriptors: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in descriptors:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def mode_of(keep_fraction: float | None) -> str | None:
    for name, frac in MODES.items():
        if keep_fraction is not None and abs(frac - keep_fraction) < 1e-12:
            return name
    return None


def stack_pairs(pairs: list[SamplePair]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([p.partial.points for p in pairs]),
        np.stack([p.complete.points for p in pairs]),
    )
