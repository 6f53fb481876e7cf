"""End-to-end completion network."""

from __future__ import annotations

import zlib

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Tensor
from .config import ModelConfig
from .decoder import Decoder, FoldingNet, PredictionBundle, ValueProjection, ValueTokens
from .encoder import CoarseHead, Encoder, Tokenizer, TokenSet, encode_with_template, template_anchors, tokenize
from .nn import Module
from .querygen import CorresAttention, QueryProjection, VoteNet, build_pool, vote_select


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent named sub-stream of a run seed (``data``, ``init``, ``sphere``...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


class PipelineError(AssertionError):
    pass


class CompletionModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = stream(seed, "init")
        self.tokenizer = Tokenizer(cfg, rng)
        self.encoder = Encoder(cfg, rng)
        self.coarse_head = CoarseHead(cfg, rng)
        self.corres = CorresAttention(cfg, rng)
        self.vote = VoteNet(cfg, rng)
        self.query_proj = QueryProjection(cfg, rng)
        self.value_proj = ValueProjection(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.fold = FoldingNet(cfg, rng)
        self._template_anchors = template_anchors(cfg)

    def template_tokens(self) -> TokenSet:
        anchors = self._template_anchors[None]
        return TokenSet(self.tokenizer.embed(anchors), anchors)

    def encode(self, partial: np.ndarray) -> tuple[TokenSet, TokenSet]:
        """-> (input tokens, encoded tokens)."""
        tokens = tokenize(self.tokenizer, partial, self.cfg)
        template = self.template_tokens() if self.cfg.use_template else None
        return tokens, encode_with_template(self.encoder, tokens, template)

    def forward(self, partial: np.ndarray, sphere: np.ndarray | None = None) -> PredictionBundle:
        """``partial`` is ``[B, N, 3]``; ``sphere`` the ``[M, 3]`` value-token sphere
        (defaults to the fixed evaluation sphere)."""
        cfg = self.cfg
        partial = np.asarray(partial, dtype=np.float64)
        if partial.ndim == 2:
            partial = partial[None]
        B = partial.shape[0]
        if sphere is None:
            sphere = geometry.sample_gaussian_sphere(cfg.n_tokens, cfg.eval_sphere_seed).points

        tokens, encoded = self.encode(partial)
        coarse, global_feature = self.coarse_head(encoded.features)
        _expect(coarse.shape == (B, cfg.n_template, 3), f"coarse template {coarse.shape}")

        fine_prov = pool_pts = pool_prov = None
        if cfg.use_corres_pool:
            sampled = tokens.anchors
            scores = self.corres(coarse, sampled)
            pool = build_pool(coarse, scores, partial, cfg, input_scorer=self.corres, sampled_input=sampled)
            n_tmpl = int((pool.provenance == 0).sum())
            _expect(
                pool.size == cfg.pool_size and n_tmpl == cfg.pool_template,
                f"pool {pool.size} = {n_tmpl} + {pool.size - n_tmpl}",
            )
            fine, gate, sel = vote_select(self.vote, pool, cfg.n_template)
            fine_prov = pool.provenance[sel]
            pool_pts, pool_prov = pool.points.data, pool.provenance
        else:
            fine, gate = coarse, None
        _expect(fine.shape == (B, cfg.n_template, 3), f"fine template {fine.shape}")

        queries = self.query_proj(fine, global_feature, gate)
        values = ValueTokens(self.value_proj(encoded.features, sphere), encoded.anchors)
        proxies = self.decoder(queries.features, values.features)
        dense = self.fold(fine, proxies)
        _expect(dense.shape == (B, cfg.n_dense, 3), f"dense output {dense.shape}")
        return PredictionBundle(coarse, fine, proxies, dense, fine_prov, pool_pts, pool_prov)

    __call__ = forward

    def complete(self, partial: np.ndarray) -> np.ndarray:
        """Inference without a tape -> dense ``[n_dense, 3]`` for one cloud."""
        with ad.no_grad():
            return self.forward(np.asarray(partial)[None]).dense.data[0].astype(np.float64)


def _expect(cond: bool, what: str) -> None:
    if not cond:
        raise PipelineError(f"pipeline arithmetic violated: {what}")
