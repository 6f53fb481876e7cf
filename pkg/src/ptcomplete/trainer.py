"""Adam with cosine-annealed learning rate, the training loop and evaluation."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import geometry, metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import SamplePair, stack_pairs
from .model import CompletionModel, stream


class TrainingError(RuntimeError):
    pass


class NonFiniteGradientError(TrainingError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * step / total_steps))


def adam_step(param, grad, m, v, t: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update at step ``t`` (1-based). Returns ``(param, m, v)``."""
    b1, b2 = betas
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    mhat = m / (1 - b1**t)
    vhat = v / (1 - b2**t)
    return param - lr * mhat / (np.sqrt(vhat) + eps), m, v


class Adam:
    def __init__(self, named_params, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.betas = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(name)
        self.t += 1
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, g, m, self.v[name], self.t, lr, self.betas, self.eps
            )
            p.data = p.data.astype(p.dtype, copy=False)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads))
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(s)
    return total


class Trainer:
    """Owns the model, optimizer and the run's RNG sub-streams."""

    def __init__(self, model: CompletionModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg.validate()
        self.opt = Adam(model.named_parameters(), (cfg.beta1, cfg.beta2), cfg.eps)
        self.data_rng = stream(cfg.seed, "data")
        self.sphere_rng = stream(cfg.seed, "sphere")
        self.step = 0
        self._order: list[int] = []
        self.log: list[dict] = []
        self.grad_seen: dict[str, bool] = {n: False for n, _ in model.named_parameters()}

    # -- state -------------------------------------------------------------

    def state(self) -> dict:
        return {
            "step": self.step,
            "order": list(self._order),
            "data_rng": self.data_rng.bit_generator.state,
            "sphere_rng": self.sphere_rng.bit_generator.state,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.model, self.opt, self.state(), self.cfg)

    def resume(self, path) -> None:
        st = load_checkpoint(path, self.model, self.opt)
        self.step = int(st.get("step", 0))
        self._order = [int(i) for i in st.get("order", [])]
        if "data_rng" in st:
            self.data_rng.bit_generator.state = st["data_rng"]
            self.sphere_rng.bit_generator.state = st["sphere_rng"]

    # -- loop --------------------------------------------------------------

    def _next_batch(self, n: int) -> list[int]:
        out = []
        for _ in range(self.cfg.batch_size):
            if not self._order:
                self._order = self.data_rng.permutation(n).tolist()
            out.append(self._order.pop(0))
        return out

    def train_step(self, pairs: list[SamplePair]) -> dict:
        cfg, mcfg = self.cfg, self.model.cfg
        batch = [pairs[i] for i in self._next_batch(len(pairs))]
        partial, complete = stack_pairs(batch)
        sphere_seed = int(self.sphere_rng.integers(0, 2**63 - 1))
        sphere = geometry.sample_gaussian_sphere(mcfg.n_tokens, sphere_seed).points
        lr = cosine_lr(self.step, cfg.total_steps, cfg.base_lr, cfg.final_lr)
        t0 = time.perf_counter()
        self.model.zero_grad()
        out = self.model(partial, sphere)
        loss, l0, l1 = metrics.training_loss(out.fine_template, out.dense, complete)
        if not math.isfinite(loss.item()):
            raise TrainingError(f"non-finite loss at step {self.step}")
        ad.backward(loss)
        for name, p in self.model.named_parameters():
            if p.grad is not None and not self.grad_seen[name] and np.any(p.grad != 0):
                self.grad_seen[name] = True
        clip_grad_norm(self.model.parameters(), cfg.clip_norm)
        self.opt.step(lr)
        self.step += 1
        rec = {
            "step": self.step,
            "lr": lr,
            "l0": float(l0.item()),
            "l1": float(l1.item()),
            "wall_ms": 0 if cfg.deterministic else round((time.perf_counter() - t0) * 1000.0, 3),
        }
        self.log.append(rec)
        return rec

    def fit(self, pairs: list[SamplePair], out_dir=None, steps: int | None = None, log_path=None, callback=None) -> list[dict]:
        """Run until ``cfg.total_steps`` (or ``steps`` more steps). Appends JSON lines to ``log_path``."""
        if not pairs:
            raise TrainingError("empty training set")
        end = self.cfg.total_steps if steps is None else min(self.cfg.total_steps, self.step + steps)
        out_dir = Path(out_dir) if out_dir is not None else None
        fh = open(log_path, "a", encoding="utf-8", newline="\n") if log_path else None
        last_good = None
        try:
            while self.step < end:
                if out_dir is not None:
                    last_good = self._snapshot()
                try:
                    rec = self.train_step(pairs)
                except TrainingError:
                    if out_dir is not None and last_good is not None:
                        self._restore(last_good)
                        self.save(out_dir / "last_good.ckpt")
                    raise
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                if callback:
                    callback(self, rec)
                ce = self.cfg.checkpoint_every
                if out_dir is not None and ce and self.step % ce == 0:
                    self.save(out_dir / f"step{self.step:06d}.ckpt")
        finally:
            if fh:
                fh.close()
        return self.log

    def _snapshot(self):
        return (
            [p.data for p in self.model.parameters()],
            {k: v for k, v in self.opt.m.items()},
            {k: v for k, v in self.opt.v.items()},
            self.opt.t,
            self.state(),
        )

    def _restore(self, snap) -> None:
        datas, m, v, t, st = snap
        for p, d in zip(self.model.parameters(), datas):
            p.data = d
        self.opt.m, self.opt.v, self.opt.t = m, v, t
        self.step = st["step"]
        self._order = list(st["order"])
        self.data_rng.bit_generator.state = st["data_rng"]
        self.sphere_rng.bit_generator.state = st["sphere_rng"]


def predict(model: CompletionModel, pairs: list[SamplePair], batch_size: int = 8) -> list[np.ndarray]:
    out = []
    with ad.no_grad():
        for s in range(0, len(pairs), batch_size):
            partial, _ = stack_pairs(pairs[s:s + batch_size])
            dense = model(partial).dense.data.astype(np.float64)
            out.extend(list(dense))
    return out


def evaluate(model: CompletionModel, pairs: list[SamplePair], tau: float = 0.01, predictions=None) -> metrics.MetricsReport:
    """CD-l1, CD-l2 and F-Score over ``pairs`` with the fixed evaluation sphere."""
    if not pairs:
        raise TrainingError("empty evaluation set")
    preds = predict(model, pairs) if predictions is None else predictions
    rows = []
    for pair, pred in zip(pairs, preds):
        gt = pair.complete.points
        rows.append((pair.category, metrics.chamfer(pred, gt, "l1"), metrics.chamfer(pred, gt, "l2"),
                     metrics.fscore(pred, gt, tau)))
    return metrics.MetricsReport.from_samples(rows)
