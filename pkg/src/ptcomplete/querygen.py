"""Coarse-template refinement by correspondence scoring, pooling and voting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Tensor
from .config import ModelConfig
from .nn import MLP, Linear, Module

TEMPLATE, INPUT = 0, 1


@dataclass
class CorresPool:
    points: Tensor  # [B, pool_size, 3]
    provenance: np.ndarray  # [pool_size] of TEMPLATE / INPUT
    scores: Tensor  # [B, pool_size] correspondence scores
    kept_template: np.ndarray  # [B, pool_template] indices into the coarse template

    @property
    def size(self) -> int:
        return self.points.shape[1]


@dataclass
class QueryTokens:
    features: Tensor  # [B, n_template, channels] after projection
    anchors: Tensor  # [B, n_template, 3] fine template
    raw_width: int  # width before projection (3 + C)


def _unique_rows(pts: np.ndarray) -> np.ndarray:
    """Indices of first occurrences, in original order."""
    _, first = np.unique(pts, axis=0, return_index=True)
    return np.sort(first)


class CorresAttention(Module):
    """Graph attention from template points to their nearest sampled-input points.

    Keys and values come from a linear map of each neighbor's embedding and its
    offset from the query point; a two-layer MLP turns the attended feature
    into one similarity score per template point.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D = cfg.corres_channels
        self.embed = MLP([3, D, D], rng)
        self.agg_feat = Linear(D, D, rng)
        self.agg_pos = Linear(3, D, rng, bias=False)
        self.q = Linear(D, D, rng)
        self.key = Linear(D, D, rng)
        self.value = Linear(D, D, rng)
        self.score = MLP([D, D, 1], rng)
        self.k = cfg.k
        self.dim = D

    def __call__(self, points: Tensor, sampled_input: np.ndarray) -> Tensor:
        """``points [B, N, 3]`` (tracked), ``sampled_input [B, S, 3]`` -> scores ``[B, N]``."""
        B, N, _ = points.shape
        D, k = self.dim, self.k
        nbrs = np.empty((B, N, k), dtype=np.int64)
        for b in range(B):
            keep = _unique_rows(sampled_input[b])
            if keep.size < k:
                raise geometry.GeometryError(f"sampled input has {keep.size} distinct points, need k={k}")
            local = geometry.knn(points.data[b], sampled_input[b][keep], k, "coordinate")
            nbrs[b] = keep[local]
        s_t = Tensor(sampled_input)
        # linear map of [e_j, p_j - p_i] split into a per-neighbor and a per-query term
        u = self.agg_feat(self.embed(s_t)) + self.agg_pos(s_t)
        v = self.agg_pos(points).reshape(B, N, 1, D)
        agg = ad.batch_gather(u, nbrs) - ad.broadcast_to(v, (B, N, k, D))
        q = self.q(self.embed(points)).reshape(B, N, 1, D)
        att = ad.softmax(
            ad.scale(ad.matmul(q, ad.swapaxes(self.key(agg), -1, -2)), 1.0 / np.sqrt(D)), axis=-1
        )
        out = ad.matmul(att, self.value(agg)).reshape(B, N, D)
        return self.score(out).reshape(B, N)


def corres_attention(module: CorresAttention, coarse_template: Tensor, sampled_input: np.ndarray, cfg=None) -> Tensor:
    return module(coarse_template, sampled_input)


def drop_order(scores: np.ndarray, highest: bool = True) -> np.ndarray:
    """Per-row ranking used for dropping: highest (or lowest) score first, ties by lowest index."""
    key = -scores if highest else scores
    return np.argsort(key, axis=-1, kind="stable")


def build_pool(
    coarse: Tensor,
    scores: Tensor,
    partial: np.ndarray,
    cfg: ModelConfig,
    input_scorer=None,
    sampled_input: np.ndarray | None = None,
) -> CorresPool:
    """Replace the template points most similar to the input with FPS samples of the input.

    Keeps ``cfg.pool_template`` template points (original order) followed by
    ``cfg.pool_input`` partial-input points. When ``input_scorer`` is given,
    the input points are scored with it against ``sampled_input``; otherwise
    they get score 0.
    """
    B, n_template, _ = coarse.shape
    n_drop = n_template - cfg.pool_template
    partial = np.asarray(partial, dtype=np.float64)
    if partial.shape[1] < cfg.pool_input:
        raise geometry.GeometryError(
            f"partial input has {partial.shape[1]} points, pool needs {cfg.pool_input}"
        )
    order = drop_order(scores.data, cfg.drop_highest)
    kept = np.sort(order[:, n_drop:], axis=-1)
    picks = np.stack([partial[b][geometry.farthest_point_sample(partial[b], cfg.pool_input, 0)] for b in range(B)])
    inp = Tensor(picks)
    pts = ad.concat([ad.batch_gather(coarse, kept), inp], axis=1)
    if input_scorer is not None:
        in_scores = input_scorer(inp, sampled_input)
    else:
        in_scores = Tensor(np.zeros((B, cfg.pool_input)))
    pool_scores = ad.concat([ad.batch_gather(scores, kept), in_scores], axis=1)
    prov = np.concatenate([np.full(cfg.pool_template, TEMPLATE, np.int8), np.full(cfg.pool_input, INPUT, np.int8)])
    return CorresPool(pts, prov, pool_scores, kept)


class VoteNet(Module):
    """Scores each pool point from its coordinate, provenance, correspondence
    score and a max-pooled summary of the whole pool."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D = cfg.vote_channels
        self.embed = MLP([3 + 2 + 1, D, D], rng)
        self.point = Linear(D, D, rng)
        self.context = Linear(D, D, rng, bias=False)
        self.out = Linear(D, 1, rng)
        self.dim = D

    def __call__(self, pool: CorresPool) -> Tensor:
        B, pool_size, _ = pool.points.shape
        onehot = np.zeros((B, pool_size, 2))
        onehot[:, np.arange(pool_size), pool.provenance.astype(np.int64)] = 1.0
        x = ad.concat([pool.points, Tensor(onehot), pool.scores.reshape(B, pool_size, 1)], axis=-1)
        e = self.embed(x)
        ctx = self.context(ad.reduce_max(e, axis=1)).reshape(B, 1, self.dim)
        h = ad.relu(self.point(e) + ad.broadcast_to(ctx, (B, pool_size, self.dim)))
        return self.out(h).reshape(B, pool_size)


def top_indices(scores: np.ndarray, n: int) -> np.ndarray:
    """Top-``n`` per row (ties to the lowest index), returned in ascending index order."""
    if n > scores.shape[-1]:
        raise ValueError(f"cannot select {n} of {scores.shape[-1]}")
    order = np.argsort(-scores, axis=-1, kind="stable")
    return np.sort(order[:, :n], axis=-1)


def vote_select(vote: VoteNet, pool: CorresPool, n_select: int) -> tuple[Tensor, Tensor, np.ndarray]:
    """-> (fine template ``[B, n_template, 3]``, selected vote scores ``[B, n_template]``, pool indices)."""
    if n_select > pool.size:
        raise ValueError(f"cannot select {n_select} points from a pool of {pool.size}")
    s = vote(pool)
    sel = top_indices(s.data, n_select)
    return ad.batch_gather(pool.points, sel), ad.batch_gather(s, sel), sel


class QueryProjection(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.proj = Linear(3 + cfg.channels, cfg.channels, rng)

    def __call__(self, fine: Tensor, global_feature: Tensor, gate: Tensor | None = None) -> QueryTokens:
        B, N, _ = fine.shape
        C = global_feature.shape[-1]
        g = ad.broadcast_to(global_feature.reshape(B, 1, C), (B, N, C))
        raw = ad.concat([fine, g], axis=-1)
        q = self.proj(raw)
        if gate is not None:
            # selected vote scores modulate their rows so the voting path is trained
            q = q * ad.broadcast_to(ad.sigmoid(gate).reshape(B, N, 1), q.shape)
        return QueryTokens(q, fine, raw.shape[-1])


def make_queries(proj: QueryProjection, fine: Tensor, global_feature: Tensor, gate: Tensor | None = None) -> QueryTokens:
    return proj(fine, global_feature, gate)
