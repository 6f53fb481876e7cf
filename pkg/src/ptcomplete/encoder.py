"""Point-proxy tokenizer, geometry-aware transformer encoder and coarse template head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Tensor
from .config import ModelConfig
from .nn import MLP, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention


@dataclass
class TokenSet:
    """``features[b, i]`` describes the region around ``anchors[b, i]``."""

    features: Tensor  # [B, n_tokens, channels]
    anchors: np.ndarray  # [B, M, 3]

    @property
    def count(self) -> int:
        return self.features.shape[1]


class EdgeConv(Module):
    """Edge convolution with max aggregation over a fixed neighbor graph.

    ``relu(W [x_i, x_j - x_i] + b)`` maxed over neighbors j. With the linear
    map split as ``x_i (Wa - Wb) + x_j Wb`` the max can be taken over the
    per-point term ``x_j Wb`` alone, and ``relu`` commutes with the max, so the
    ``k``-fold edge tensor is never materialized. ``center`` holds ``Wa - Wb``.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.center = Linear(c_in, c_out, rng)
        self.neighbor = Linear(c_in, c_out, rng, bias=False)

    def __call__(self, x: Tensor, neighbors: np.ndarray) -> Tensor:
        return ad.relu(self.center(x) + ad.gather_max(self.neighbor(x), neighbors))


class Tokenizer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        C = cfg.channels
        self.conv1 = EdgeConv(3, cfg.edge_channels, rng)
        self.conv2 = EdgeConv(cfg.edge_channels, C, rng)
        self.feat_proj = MLP([C, C, C], rng)
        self.pos_proj = MLP([3, C, C], rng)
        self.cfg = cfg

    def embed(self, anchors: np.ndarray) -> Tensor:
        """Proxy features for already-sampled anchors ``[B, M, 3]``."""
        k = min(self.cfg.k, anchors.shape[1])
        nbrs = geometry.batch_knn(anchors, anchors, k, "coordinate")
        x = Tensor(anchors)
        f = self.conv2(self.conv1(x, nbrs), nbrs)
        return self.feat_proj(f) + self.pos_proj(x)


def sample_anchors(partial: np.ndarray, cfg: ModelConfig, start: int | None = None, rng=None) -> np.ndarray:
    """FPS ``cfg.n_tokens`` anchors from one cloud, padding small clouds by repetition."""
    pts = geometry.as_points(partial)
    M = cfg.n_tokens
    if pts.shape[0] < 1:
        raise geometry.GeometryError("cannot tokenize an empty cloud")
    if pts.shape[0] < M:
        rng = np.random.default_rng(0) if rng is None else rng
        pts = geometry.resample(pts, M, rng).points
    s = cfg.fps_start if start is None else start
    return pts[geometry.farthest_point_sample(pts, M, min(s, pts.shape[0] - 1))]


def tokenize(tokenizer: Tokenizer, partial: np.ndarray, cfg: ModelConfig, start: int | None = None) -> TokenSet:
    """``[B, N, 3]`` (or a single ``[N, 3]`` cloud) -> TokenSet of M proxies."""
    batch = np.asarray(partial, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[None]
    anchors = np.stack([sample_anchors(p, cfg, start) for p in batch])
    return TokenSet(tokenizer.embed(anchors), anchors)


def template_anchors(cfg: ModelConfig, seed: int | None = None) -> np.ndarray:
    """Sphere of ``M * oversample`` points thinned to ``M`` by FPS -> ``[M, 3]``."""
    seed = cfg.template_seed if seed is None else seed
    sphere = geometry.sample_gaussian_sphere(cfg.n_tokens * cfg.template_oversample, seed)
    return sphere.points[geometry.farthest_point_sample(sphere, cfg.n_tokens, 0)]


class GeometryAwareBlock(Module):
    """Pre-norm transformer block whose attention output is concatenated with a
    kNN feature-space branch, followed by a feed-forward sublayer."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, ffn: bool = True):
        C = cfg.channels
        self.norm1 = LayerNorm(C)
        self.attn = MultiHeadAttention(C, cfg.heads, rng)
        self.local = EdgeConv(C, C, rng)
        self.merge = Linear(2 * C, C, rng)
        if ffn:
            self.norm2 = LayerNorm(C)
            self.ffn = FeedForward(C, cfg.ffn_mult * C, rng)
        self.k = cfg.k
        self.has_ffn = ffn

    def mix(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        k = min(self.k, x.shape[1])
        nbrs = geometry.batch_knn(h.data, h.data, k, "feature")
        local = self.local(h, nbrs)
        return x + self.merge(ad.concat([local, self.attn(h)], axis=-1))

    def __call__(self, x: Tensor) -> Tensor:
        x = self.mix(x)
        if self.has_ffn:
            x = x + self.ffn(self.norm2(x))
        return x


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = [GeometryAwareBlock(cfg, rng) for _ in range(cfg.enc_depth)]
        self.every_layer = cfg.template_every_layer

    def __call__(self, x: Tensor, template: Tensor | None = None) -> Tensor:
        for i, block in enumerate(self.blocks):
            if template is not None and (i == 0 or self.every_layer):
                x = x + template
            x = block(x)
        return x


def geometry_aware_block(block: GeometryAwareBlock, tokens: TokenSet) -> TokenSet:
    return TokenSet(block(tokens.features), tokens.anchors)


def encode_with_template(encoder: Encoder, input_tokens: TokenSet, template_tokens: TokenSet | None) -> TokenSet:
    """Run the encoder, adding the template proxies before each block."""
    if template_tokens is None:
        return TokenSet(encoder(input_tokens.features), input_tokens.anchors)
    t = template_tokens.features
    if t.ndim == 3:
        if t.shape[0] != 1:
            raise ad.ShapeError("template tokens must be shared across the batch")
        t = t.reshape(t.shape[1:])
    if t.shape != input_tokens.features.shape[1:]:
        raise ad.ShapeError(
            f"template tokens {t.shape} do not match input tokens {input_tokens.features.shape[1:]}"
        )
    return TokenSet(encoder(input_tokens.features, t), input_tokens.anchors)


class CoarseHead(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.mlp = MLP([cfg.channels, cfg.coarse_hidden, 3 * cfg.n_template], rng)
        self.n = cfg.n_template

    def __call__(self, encoded: Tensor) -> tuple[Tensor, Tensor]:
        """-> (coarse template ``[B, n_template, 3]``, global feature ``[B, channels]``)."""
        g = ad.reduce_max(encoded, axis=1)
        coarse = self.mlp(g).reshape(g.shape[0], self.n, 3)
        return coarse, g


def coarse_template_head(head: CoarseHead, encoded: TokenSet) -> tuple[Tensor, Tensor]:
    return head(encoded.features)
