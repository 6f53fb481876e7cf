"""Chamfer distance, F-Score and the two-term training loss."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .geometry import as_points


class MetricsError(ValueError):
    pass


def _pair(P, G):
    p, g = as_points(P), as_points(G)
    if p.shape[0] == 0 or g.shape[0] == 0:
        raise MetricsError("chamfer/fscore need nonempty clouds")
    return p, g


def chamfer(P, G, norm: str = "l1") -> float:
    """Symmetric Chamfer distance between two clouds.

    ``norm="l1"`` averages Euclidean nearest-neighbor distances;
    ``norm="l2"`` averages squared Euclidean distances.
    """
    p, g = _pair(P, G)
    _, d_pg = kernels.nn_search(p, g)
    _, d_gp = kernels.nn_search(g, p)
    if norm == "l1":
        return float(np.sqrt(d_pg).mean() + np.sqrt(d_gp).mean())
    if norm == "l2":
        return float(d_pg.mean() + d_gp.mean())
    raise MetricsError(f"unknown chamfer norm {norm!r}")


def fscore(P, G, tau: float = 0.01) -> float:
    """Harmonic mean of precision and recall at distance threshold ``tau`` (strict ``<``)."""
    if tau <= 0:
        raise MetricsError("tau must be positive")
    p, g = _pair(P, G)
    _, d_pg = kernels.nn_search(p, g)
    _, d_gp = kernels.nn_search(g, p)
    precision = float(np.mean(np.sqrt(d_pg) < tau))
    recall = float(np.mean(np.sqrt(d_gp) < tau))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def chamfer_tensor(pred: Tensor, gt: np.ndarray, squared: bool = False) -> Tensor:
    """Differentiable batched Chamfer distance, averaged over the batch.

    ``pred`` is ``[B, N, 3]`` and carries gradients; ``gt`` is a constant
    ``[B, M, 3]`` array. Nearest neighbors are found without gradients, then
    distances are recomputed on the tape.
    """
    gt = np.asarray(gt)
    B = pred.shape[0]
    if pred.shape[1] == 0 or gt.shape[1] == 0:
        raise MetricsError("chamfer needs nonempty clouds")
    idx_pg = np.empty(pred.shape[:2], dtype=np.int64)
    idx_gp = np.empty(gt.shape[:2], dtype=np.int64)
    for b in range(B):
        idx_pg[b], _ = kernels.nn_search(pred.data[b], gt[b])
        idx_gp[b], _ = kernels.nn_search(gt[b], pred.data[b])
    g_t = Tensor(gt)
    diff_pg = pred - ad.batch_gather(g_t, idx_pg)
    diff_gp = g_t - ad.batch_gather(pred, idx_gp)
    if squared:
        d1 = ad.sum(diff_pg * diff_pg, axis=-1)
        d2 = ad.sum(diff_gp * diff_gp, axis=-1)
    else:
        d1 = ad.row_norm(diff_pg)
        d2 = ad.row_norm(diff_gp)
    return ad.mean(d1) + ad.mean(d2)


def training_loss(fine_template: Tensor, prediction: Tensor, gt: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """``(L0 + L1, L0, L1)`` with unsquared Chamfer terms against the complete cloud."""
    l0 = chamfer_tensor(fine_template, gt)
    l1 = chamfer_tensor(prediction, gt)
    return l0 + l1, l0, l1


@dataclass
class MetricsReport:
    cd_l1: float
    cd_l2: float
    fscore: float
    per_category: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, rows: list[tuple[str, float, float, float]]) -> "MetricsReport":
        """Aggregate ``(category, cd_l1, cd_l2, fscore)`` rows; Avg is the mean over samples."""
        if not rows:
            raise MetricsError("no samples to aggregate")
        cats: dict[str, list] = {}
        for cat, a, b, f in rows:
            cats.setdefault(cat, []).append((a, b, f))
        per = {c: tuple(float(x) for x in np.mean(v, axis=0)) for c, v in sorted(cats.items())}
        arr = np.array([r[1:] for r in rows], dtype=np.float64)
        mean = arr.mean(axis=0)
        return cls(
            float(mean[0]), float(mean[1]), float(mean[2]), per, {c: len(v) for c, v in sorted(cats.items())}
        )

    def to_table(self, scale: float = 1000.0) -> str:
        """Plain-text table; Chamfer columns are multiplied by ``scale``."""
        head = f"{'category':<16}{'n':>5}{'CD-l1 x1000':>14}{'CD-l2 x1000':>14}{'F-Score@1%':>12}"
        lines = [head, "-" * len(head)]
        for cat, (a, b, f) in self.per_category.items():
            lines.append(f"{cat:<16}{self.counts.get(cat, 0):>5}{a * scale:>14.3f}{b * scale:>14.3f}{f:>12.3f}")
        lines.append("-" * len(head))
        total = sum(self.counts.values())
        lines.append(
            f"{'Avg':<16}{total:>5}{self.cd_l1 * scale:>14.3f}{self.cd_l2 * scale:>14.3f}{self.fscore:>12.3f}"
        )
        return "\n".join(lines)

    def to_records(self) -> str:
        """One JSON object per line: each category, then the overall average."""
        out = []
        for cat, (a, b, f) in self.per_category.items():
            out.append(json.dumps({"category": cat, "n": self.counts.get(cat, 0), "cd_l1": a, "cd_l2": b, "fscore": f}))
        out.append(json.dumps({"category": "Avg", "n": sum(self.counts.values()), "cd_l1": self.cd_l1,
                               "cd_l2": self.cd_l2, "fscore": self.fscore}))
        return "\n".join(out) + "\n"
