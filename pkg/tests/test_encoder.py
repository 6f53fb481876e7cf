import numpy as np
import pytest

from ptcomplete import autodiff as ad
from ptcomplete import geometry
from ptcomplete.autodiff import Tensor
from ptcomplete.config import ModelConfig
from ptcomplete.encoder import (
    CoarseHead,
    Encoder,
    GeometryAwareBlock,
    Tokenizer,
    TokenSet,
    coarse_template_head,
    encode_with_template,
    geometry_aware_block,
    template_anchors,
    tokenize,
)
from ptcomplete.metrics import chamfer_tensor


@pytest.fixture
def parts(tiny_cfg):
    r = np.random.default_rng(0)
    return Tokenizer(tiny_cfg, r), Encoder(tiny_cfg, r), CoarseHead(tiny_cfg, r)


class TestTokenize:
    def test_shapes(self, tiny_cfg, parts, rng):
        tokens = tokenize(parts[0], rng.standard_normal((2, 50, 3)), tiny_cfg)
        assert tokens.features.shape == (2, tiny_cfg.n_tokens, tiny_cfg.channels)
        assert tokens.anchors.shape == (2, tiny_cfg.n_tokens, 3)

    def test_anchors_are_fps_subset(self, tiny_cfg, parts, rng):
        cloud = rng.standard_normal((50, 3))
        tokens = tokenize(parts[0], cloud, tiny_cfg)
        idx = geometry.farthest_point_sample(cloud, tiny_cfg.n_tokens, tiny_cfg.fps_start)
        np.testing.assert_array_equal(tokens.anchors[0], cloud[idx])

    def test_translation_moves_anchors(self, tiny_cfg, parts, rng):
        cloud = rng.standard_normal((50, 3))
        t = np.array([0.5, -0.25, 2.0])
        a = tokenize(parts[0], cloud, tiny_cfg).anchors
        b = tokenize(parts[0], cloud + t, tiny_cfg).anchors
        np.testing.assert_allclose(b, a + t, atol=1e-12)

    def test_small_cloud_is_padded(self, tiny_cfg, parts, rng):
        tokens = tokenize(parts[0], rng.standard_normal((5, 3)), tiny_cfg)
        assert tokens.count == tiny_cfg.n_tokens

    def test_empty_cloud(self, tiny_cfg, parts):
        with pytest.raises(geometry.GeometryError):
            tokenize(parts[0], np.zeros((0, 3)), tiny_cfg)


class TestBlock:
    def test_shape_preserved(self, tiny_cfg, rng):
        block = GeometryAwareBlock(tiny_cfg, rng)
        tokens = TokenSet(Tensor(rng.standard_normal((2, 16, tiny_cfg.channels))), np.zeros((2, 16, 3)))
        assert geometry_aware_block(block, tokens).features.shape == (2, 16, tiny_cfg.channels)

    def test_permutation_equivariance(self, f64, tiny_cfg, rng):
        block = GeometryAwareBlock(tiny_cfg, rng)
        x = rng.standard_normal((1, 16, tiny_cfg.channels))
        perm = rng.permutation(16)
        out = block(Tensor(x)).data
        out_p = block(Tensor(x[:, perm])).data
        np.testing.assert_allclose(out_p, out[:, perm], atol=1e-5)

    def test_k1_local_branch_sees_only_itself(self, f64, rng):
        cfg = ModelConfig(n_tokens=8, channels=6, heads=2, k=1)
        block = GeometryAwareBlock(cfg, rng)
        h = block.norm1(Tensor(rng.standard_normal((1, 8, 6))))
        nbrs = geometry.batch_knn(h.data, h.data, 1, "feature")
        np.testing.assert_array_equal(nbrs[0, :, 0], np.arange(8))
        # with only itself as neighbor the edge term x_j - x_i vanishes
        expected = ad.relu(block.local.center(h) + block.local.neighbor(h)).data
        np.testing.assert_allclose(block.local(h, nbrs).data, expected, atol=1e-12)


class TestTemplateFusion:
    def test_zero_template_is_identity(self, f64, tiny_cfg, parts, rng):
        tokens = tokenize(parts[0], rng.standard_normal((1, 40, 3)), tiny_cfg)
        zero = TokenSet(Tensor(np.zeros((1, tiny_cfg.n_tokens, tiny_cfg.channels))), np.zeros((1, 16, 3)))
        a = encode_with_template(parts[1], tokens, zero).features.data
        b = encode_with_template(parts[1], tokens, None).features.data
        np.testing.assert_array_equal(a, b)

    def test_template_seed_matters(self, f64, tiny_cfg, parts, rng):
        tokens = tokenize(parts[0], rng.standard_normal((1, 40, 3)), tiny_cfg)
        outs = []
        for seed in (1, 2):
            anchors = template_anchors(tiny_cfg, seed)[None]
            tmpl = TokenSet(parts[0].embed(anchors), anchors)
            outs.append(encode_with_template(parts[1], tokens, tmpl).features.data)
        assert not np.allclose(outs[0], outs[1])

    def test_shape_mismatch(self, tiny_cfg, parts, rng):
        tokens = tokenize(parts[0], rng.standard_normal((1, 40, 3)), tiny_cfg)
        bad = TokenSet(Tensor(np.zeros((1, 8, tiny_cfg.channels))), np.zeros((1, 8, 3)))
        with pytest.raises(ad.ShapeError):
            encode_with_template(parts[1], tokens, bad)

    def test_template_anchors_on_sphere(self, tiny_cfg):
        a = template_anchors(tiny_cfg)
        assert a.shape == (tiny_cfg.n_tokens, 3)
        assert np.abs(np.linalg.norm(a, axis=1) - 1).max() <= 1e-6


class TestCoarseHead:
    def test_default_count(self):
        cfg = ModelConfig()
        head = CoarseHead(cfg, np.random.default_rng(0))
        coarse, g = head(Tensor(np.random.default_rng(1).standard_normal((1, 4, cfg.channels))))
        assert coarse.shape == (1, 512, 3) and g.shape == (1, cfg.channels)

    def test_token_permutation_bitwise(self, tiny_cfg, parts, rng):
        x = rng.standard_normal((1, 16, tiny_cfg.channels))
        perm = rng.permutation(16)
        a = coarse_template_head(parts[2], TokenSet(Tensor(x), None))[0].data
        b = coarse_template_head(parts[2], TokenSet(Tensor(x[:, perm]), None))[0].data
        assert a.tobytes() == b.tobytes()

    def test_gradient_reaches_tokenizer(self, tiny_cfg, parts, rng):
        tok, enc, head = parts
        tokens = tokenize(tok, rng.standard_normal((1, 40, 3)), tiny_cfg)
        coarse, _ = head(enc(tokens.features))
        ad.backward(chamfer_tensor(coarse, rng.standard_normal((1, 30, 3))))
        norm = sum(float(np.abs(p.grad).sum()) for p in tok.parameters() if p.grad is not None)
        assert norm > 0
