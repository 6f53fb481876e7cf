"""Value tokens, the query/value transformer decoder and grid folding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .encoder import GeometryAwareBlock
from .nn import MLP, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .querygen import QueryTokens


@dataclass
class ValueTokens:
    features: Tensor  # [B, n_tokens, channels]
    anchors: np.ndarray  # [B, M, 3]


@dataclass
class PredictionBundle:
    coarse_template: Tensor  # [B, n_template, 3]
    fine_template: Tensor  # [B, n_template, 3]
    proxies: Tensor  # [B, n_template, channels]
    dense: Tensor  # [B, n_dense, 3]
    fine_provenance: np.ndarray | None = None  # [B, n_template] pool provenance of each fine point
    pool_points: np.ndarray | None = None  # [B, pool_size, 3]
    pool_provenance: np.ndarray | None = None  # [pool_size]


class ValueProjection(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.sphere_embed = MLP([3, cfg.sphere_channels, cfg.sphere_channels], rng)
        self.proj = Linear(cfg.channels + cfg.sphere_channels, cfg.channels, rng)
        self.use_sphere = cfg.use_value_sphere
        self.ds = cfg.sphere_channels

    def __call__(self, encoded: Tensor, sphere: np.ndarray) -> Tensor:
        B, M, _ = encoded.shape
        if self.use_sphere:
            s = np.asarray(sphere)
            if s.shape != (M, 3):
                raise ad.ShapeError(f"value sphere {s.shape} does not match {M} tokens")
            e = ad.broadcast_to(self.sphere_embed(Tensor(s)).reshape(1, M, self.ds), (B, M, self.ds))
        else:
            e = Tensor(np.zeros((B, M, self.ds)))
        return self.proj(ad.concat([encoded, e], axis=-1))


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        C = cfg.channels
        self.self_block = GeometryAwareBlock(cfg, rng, ffn=False)
        self.norm_q = LayerNorm(C)
        self.norm_v = LayerNorm(C)
        self.cross = MultiHeadAttention(C, cfg.heads, rng)
        self.norm_ff = LayerNorm(C)
        self.ffn = FeedForward(C, cfg.ffn_mult * C, rng)

    def __call__(self, q: Tensor, v: Tensor) -> Tensor:
        q = self.self_block(q)
        q = q + self.cross(self.norm_q(q), self.norm_v(v))
        return q + self.ffn(self.norm_ff(q))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.dec_depth)]
        self.out = Linear(cfg.channels, cfg.channels, rng)

    def __call__(self, queries: Tensor, values: Tensor) -> Tensor:
        if queries.shape[-1] != values.shape[-1] or queries.shape[0] != values.shape[0]:
            raise ad.ShapeError(f"decoder widths differ: {queries.shape} vs {values.shape}")
        x = queries
        for layer in self.layers:
            x = layer(x, values)
        return self.out(x)


def dynamic_decode(decoder: Decoder, queries: QueryTokens, values: ValueTokens) -> Tensor:
    return decoder(queries.features, values.features)


def grid_shape(up_factor: int) -> tuple[int, int]:
    """Most nearly square ``rows x cols`` lattice with ``rows * cols == up_factor``."""
    if up_factor < 1:
        raise ValueError(f"up_factor must be positive, got {up_factor}")
    rows = max(d for d in range(1, math.isqrt(up_factor) + 1) if up_factor % d == 0)
    return rows, up_factor // rows


def folding_grid(up_factor: int, extent: float = 0.05) -> np.ndarray:
    """Lattice over ``[-extent, extent]^2`` with ``up_factor`` nodes -> ``[u, 2]``.

    Square factors give the ``sqrt(u) x sqrt(u)`` grid; others (32 -> 4 x 8)
    use the most nearly square factorization.
    """
    rows, cols = grid_shape(up_factor)

    def axis(n):
        return np.linspace(-extent, extent, n) if n > 1 else np.zeros(1)

    gx, gy = np.meshgrid(axis(rows), axis(cols), indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


class FoldingNet(Module):
    """Maps (proxy, grid coordinate) to a bounded 3-D offset from the template point.

    The last layer starts at zero, so every group initially collapses onto
    its template point. The lattice is divided by its extent before the grid
    layer so the copies within a group start from clearly different hidden
    activations and can spread apart.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        H = cfg.fold_hidden
        self.feat = Linear(cfg.channels, H, rng)
        self.grid = Linear(2, H, rng, bias=False)
        self.hidden = Linear(H, H, rng)
        self.head = Linear(H, 3, rng, zero_init=True)
        self.grid_points = folding_grid(cfg.up_factor, cfg.fold_grid_extent)
        self.grid_input = self.grid_points / cfg.fold_grid_extent
        self.bound = cfg.offset_bound
        self.hdim = H

    def offsets(self, proxies: Tensor) -> Tensor:
        B, N, _ = proxies.shape
        U, H = self.grid_points.shape[0], self.hdim
        f = ad.broadcast_to(self.feat(proxies).reshape(B, N, 1, H), (B, N, U, H))
        h = ad.relu(f + self.grid(Tensor(self.grid_input)))
        h = ad.relu(self.hidden(h))
        return ad.scale(ad.tanh(self.head(h)), self.bound)

    def __call__(self, fine: Tensor, proxies: Tensor) -> Tensor:
        B, N, _ = fine.shape
        if proxies.shape[:2] != (B, N):
            raise ad.ShapeError(f"proxies {proxies.shape} do not match template {fine.shape}")
        U = self.grid_points.shape[0]
        centers = ad.broadcast_to(fine.reshape(B, N, 1, 3), (B, N, U, 3))
        return (self.offsets(proxies) + centers).reshape(B, N * U, 3)


def fold_expand(fold: FoldingNet, fine: Tensor, proxies: Tensor) -> Tensor:
    return fold(fine, proxies)
