import json

import numpy as np
import pytest

from ptcomplete import autodiff as ad
from ptcomplete import metrics
from ptcomplete.config import TrainConfig
from ptcomplete.model import CompletionModel
from ptcomplete.nn import Parameter
from ptcomplete.trainer import (
    Adam,
    NonFiniteGradientError,
    Trainer,
    TrainingError,
    adam_step,
    clip_grad_norm,
    cosine_lr,
    evaluate,
)


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 1e-4, 1e-6) == 1e-4
        assert cosine_lr(100, 100, 1e-4, 1e-6) == 1e-6
        assert cosine_lr(50, 100, 1e-4, 1e-6) == pytest.approx((1e-4 + 1e-6) / 2, rel=1e-12)

    def test_monotone(self):
        lrs = [cosine_lr(s, 40, 1.0, 0.01) for s in range(41)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cosine_lr(101, 100, 1.0, 0.0)

    def test_default_floor(self):
        assert TrainConfig(base_lr=2e-4).final_lr == pytest.approx(2e-6)


def scalar_adam_oracle(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    return p


class TestAdam:
    def test_zero_gradient_is_a_no_op(self):
        p, m, v = np.array([1.5]), np.zeros(1), np.zeros(1)
        np.testing.assert_array_equal(adam_step(p, np.zeros(1), m, v, 1, 0.1)[0], p)

    def test_first_step_magnitude(self):
        for g in (3.0, -0.02):
            new, _, _ = adam_step(np.array([0.0]), np.array([g]), np.zeros(1), np.zeros(1), 1, 1e-3)
            assert np.sign(new[0]) == -np.sign(g)
            assert abs(abs(new[0]) - 1e-3) < 1e-8

    def test_matches_scalar_oracle(self, f64):
        grads = [0.3, -1.2, 0.7, 0.05, 2.0]
        param = Parameter(np.array([0.5]))
        opt = Adam([("p", param)])
        for g in grads:
            param.grad = np.array([g])
            opt.step(0.01)
        assert abs(param.data[0] - scalar_adam_oracle(0.5, grads, 0.01)) <= 1e-10

    def test_non_finite_gradient_names_parameter(self):
        param = Parameter(np.ones(2))
        param.grad = np.array([1.0, np.inf])
        with pytest.raises(NonFiniteGradientError, match="enc.w"):
            Adam([("enc.w", param)]).step(0.1)

    def test_clip(self, f64):
        a, b = Parameter(np.zeros(2)), Parameter(np.zeros(1))
        a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
        assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
        assert np.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2)) == pytest.approx(1.0)


class TestTrainer:
    def test_step_zero_loss_matches_independent_forward(self, tiny_cfg, tiny_pairs):
        cfg = TrainConfig(total_steps=5, seed=3)
        trainer = Trainer(CompletionModel(tiny_cfg, seed=3), cfg)
        # replay the trainer's RNG draws on a fresh copy
        ref = Trainer(CompletionModel(tiny_cfg, seed=3), cfg)
        idx = ref._next_batch(len(tiny_pairs))[0]
        from ptcomplete.geometry import sample_gaussian_sphere

        sphere = sample_gaussian_sphere(tiny_cfg.n_tokens, int(ref.sphere_rng.integers(0, 2**63 - 1))).points
        with ad.no_grad():
            out = ref.model(tiny_pairs[idx].partial.points[None], sphere)
            _, l0, l1 = metrics.training_loss(out.fine_template, out.dense, tiny_pairs[idx].complete.points[None])
        rec = trainer.train_step(tiny_pairs)
        assert rec["l0"] == l0.item() and rec["l1"] == l1.item()

    def test_log_fields(self, tiny_cfg, tiny_pairs, tmp_path):
        trainer = Trainer(CompletionModel(tiny_cfg), TrainConfig(total_steps=3))
        trainer.fit(tiny_pairs, log_path=tmp_path / "log.jsonl")
        recs = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in recs] == [1, 2, 3]
        assert set(recs[0]) == {"step", "lr", "l0", "l1", "wall_ms"}
        assert recs[0]["lr"] == 1e-4

    def test_no_dead_parameters(self, tiny_cfg, tiny_pairs):
        trainer = Trainer(CompletionModel(tiny_cfg), TrainConfig(total_steps=50))
        trainer.fit(tiny_pairs)
        dead = [n for n, seen in trainer.grad_seen.items() if not seen]
        assert dead == []

    def test_loss_decreases(self, tiny_cfg, tiny_pairs):
        trainer = Trainer(CompletionModel(tiny_cfg), TrainConfig(total_steps=60, base_lr=1e-3))
        log = trainer.fit(tiny_pairs[:1])
        first = log[0]["l0"] + log[0]["l1"]
        last = log[-1]["l0"] + log[-1]["l1"]
        assert last < first

    def test_non_finite_loss_writes_last_good(self, tiny_cfg, tiny_pairs, tmp_path):
        trainer = Trainer(CompletionModel(tiny_cfg), TrainConfig(total_steps=10))
        trainer.fit(tiny_pairs, steps=2)
        before = {n: p.data.copy() for n, p in trainer.model.named_parameters()}
        trainer.model.fold.head.bias.data = np.full(3, np.nan, dtype=np.float32)
        before["fold.head.bias"] = trainer.model.fold.head.bias.data.copy()
        with pytest.raises(TrainingError):
            trainer.fit(tiny_pairs, out_dir=tmp_path)
        assert (tmp_path / "last_good.ckpt").exists()
        assert trainer.step == 2
        for n, p in trainer.model.named_parameters():
            np.testing.assert_array_equal(p.data, before[n])

    def test_empty_dataset(self, tiny_cfg):
        with pytest.raises(TrainingError):
            Trainer(CompletionModel(tiny_cfg), TrainConfig()).fit([])

    def test_resume_matches_uninterrupted(self, tiny_cfg, tiny_pairs, tmp_path):
        cfg = TrainConfig(total_steps=20, seed=4)
        full = Trainer(CompletionModel(tiny_cfg, seed=4), cfg)
        full.fit(tiny_pairs, steps=20)

        first = Trainer(CompletionModel(tiny_cfg, seed=4), cfg)
        first.fit(tiny_pairs, steps=10)
        first.save(tmp_path / "mid.ckpt")
        second = Trainer(CompletionModel(tiny_cfg, seed=99), cfg)
        second.resume(tmp_path / "mid.ckpt")
        second.fit(tiny_pairs, steps=10)
        assert first.log + second.log == full.log
        for (n, a), (_, b) in zip(full.model.named_parameters(), second.model.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), n


class TestEvaluate:
    def test_perfect_prediction(self, tiny_cfg, tiny_pairs):
        preds = [p.complete.points for p in tiny_pairs]
        rep = evaluate(CompletionModel(tiny_cfg), tiny_pairs, predictions=preds)
        assert rep.cd_l1 == 0.0 and rep.cd_l2 == 0.0 and rep.fscore == 1.0
        assert set(rep.per_category) == {"box", "cylinder"}

    def test_eval_is_deterministic(self, tiny_cfg, tiny_pairs):
        model = CompletionModel(tiny_cfg)
        assert evaluate(model, tiny_pairs) == evaluate(model, tiny_pairs)
