"""Non-differentiable point-set operations.

All distance comparisons run in float64 and break ties toward the lowest
index, so results depend only on the inputs and the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"expected an (n, 3) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.count


def as_points(pc) -> np.ndarray:
    if isinstance(pc, PointCloud):
        return pc.points
    return np.asarray(pc, dtype=np.float64)


def sample_gaussian_sphere(n: int, seed: int) -> PointCloud:
    """Draw ``n`` standard-normal 3-vectors and project them onto the unit sphere."""
    if n < 1:
        raise GeometryError("sphere needs at least one point")
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((n, 3))
    norms = np.linalg.norm(s, axis=1)
    while np.any(norms == 0):  # measure-zero, but keep the function total
        bad = norms == 0
        s[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(s, axis=1)
    return PointCloud(s / norms[:, None])


def farthest_point_sample(pc, m: int, start: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``m`` indices beginning at ``start``."""
    pts = as_points(pc)
    n = pts.shape[0]
    if m < 1 or m > n:
        raise GeometryError(f"cannot sample {m} of {n} points")
    if not 0 <= start < n:
        raise GeometryError(f"start index {start} out of range")
    return kernels.fps(pts, m, start)


def knn(queries, refs, k: int, space: str = "coordinate") -> np.ndarray:
    """Indices of the ``k`` nearest ``refs`` per query, nearest first.

    ``space="coordinate"`` expects 3-D points and uses exact differences;
    ``space="feature"`` accepts any width and forms distances from inner
    products, which is what makes the wide decoder tokens affordable.
    Self matches are not excluded.
    """
    q = np.asarray(queries.points if isinstance(queries, PointCloud) else queries, dtype=np.float64)
    r = np.asarray(refs.points if isinstance(refs, PointCloud) else refs, dtype=np.float64)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise GeometryError(f"knn: dimensionality mismatch {q.shape} vs {r.shape}")
    if k < 1 or k > r.shape[0]:
        raise GeometryError(f"knn: k={k} with {r.shape[0]} references")
    if space == "coordinate":
        if q.shape[1] != 3:
            raise GeometryError("coordinate-space knn needs 3-D points")
        return kernels.knn_direct(q, r, k)
    if space == "feature":
        d = (q * q).sum(1)[:, None] + (r * r).sum(1)[None, :] - 2.0 * (q @ r.T)
        return kernels.topk_rows(d, k)
    raise GeometryError(f"unknown knn space {space!r}")


def batch_knn(queries: np.ndarray, refs: np.ndarray, k: int, space: str = "coordinate") -> np.ndarray:
    """:func:`knn` over a leading batch axis -> ``[B, Q, k]``."""
    return np.stack([knn(q, r, k, space) for q, r in zip(queries, refs)])


def halfspace_crop(pc, direction, keep_fraction: float) -> PointCloud:
    """Keep the ``ceil(keep_fraction * n)`` points with the smallest projection onto ``direction``.

    Survivors keep their original order.
    """
    pts = as_points(pc)
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,) or not np.any(d):
        raise GeometryError("crop direction must be a nonzero 3-vector")
    if not 0.0 < keep_fraction <= 1.0:
        raise GeometryError(f"keep_fraction {keep_fraction} outside (0, 1]")
    n_keep = math.ceil(keep_fraction * pts.shape[0])
    if n_keep < 1:
        raise GeometryError("crop would produce an empty cloud")
    d = d / np.linalg.norm(d)
    order = np.argsort(pts @ d, kind="stable")
    return PointCloud(pts[np.sort(order[:n_keep])])


def normalize_cloud(pc) -> tuple[PointCloud, np.ndarray, float]:
    """Center on the centroid and scale the farthest point to radius 1.

    Returns ``(normalized, center, scale)`` with ``original = normalized * scale + center``.
    """
    pts = as_points(pc)
    if pts.shape[0] < 1:
        raise GeometryError("cannot normalize an empty cloud")
    center = pts.mean(axis=0)
    shifted = pts - center
    scale = float(np.sqrt((shifted * shifted).sum(axis=1).max()))
    if scale == 0.0:
        scale = 1.0
    return PointCloud(shifted / scale), center, scale


def apply_normalization(pc, center: np.ndarray, scale: float) -> PointCloud:
    return PointCloud((as_points(pc) - center) / scale)


def denormalize_cloud(pc, center: np.ndarray, scale: float) -> PointCloud:
    return PointCloud(as_points(pc) * scale + center)


def resample(pc, n: int, rng: np.random.Generator) -> PointCloud:
    """Subsample without replacement, or pad by repeating random points."""
    pts = as_points(pc)
    m = pts.shape[0]
    if m == 0:
        raise GeometryError("cannot resample an empty cloud")
    if m >= n:
        idx = np.sort(rng.choice(m, size=n, replace=False))
    else:
        idx = np.concatenate([np.arange(m), rng.choice(m, size=n - m, replace=True)])
    return PointCloud(pts[idx])
