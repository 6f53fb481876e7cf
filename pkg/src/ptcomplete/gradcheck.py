"""Central finite-difference checks for every differentiable op and the full loss.

Each check builds a scalar from random 64-bit inputs (ops with tensor outputs
are contracted against a fixed random weight) and compares the tape gradient
with central differences. The error is norm-wise:
``|g_tape - g_fd| / max(|g_tape|, |g_fd|)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    seed: int
    rel_error: float

    @property
    def ok(self) -> bool:
        return self.rel_error <= TOLERANCE


def numerical_grad(f: Callable[[list[np.ndarray]], float], arrays: list[np.ndarray], which: int,
                   coords: np.ndarray | None = None, eps: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arrays[which]`` (flat ``coords`` only, if given)."""
    x = arrays[which]
    flat = x.reshape(-1)
    coords = np.arange(flat.size) if coords is None else coords
    out = np.empty(len(coords))
    for n, i in enumerate(coords):
        old = flat[i]
        flat[i] = old + eps
        fp = f(arrays)
        flat[i] = old - eps
        fm = f(arrays)
        flat[i] = old
        out[n] = (fp - fm) / (2 * eps)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_function(name: str, build: Callable[[list[Tensor]], Tensor], arrays: list[np.ndarray], seed: int,
                   eps: float = 1e-6) -> CheckResult:
    """Compare tape and finite-difference gradients of ``build`` w.r.t. all ``arrays``."""
    with ad.default_dtype(np.float64):
        def f(arrs):
            with ad.no_grad():
                return build([Tensor(a) for a in arrs]).item()

        ts = [Tensor(a, requires_grad=True) for a in arrays]
        ad.backward(build(ts))
        worst = 0.0
        num_all, tape_all = [], []
        for i, t in enumerate(ts):
            tape = np.zeros(t.shape) if t.grad is None else t.grad
            num_all.append(numerical_grad(f, arrays, i, eps=eps))
            tape_all.append(tape.reshape(-1))
        worst = rel_error(np.concatenate(tape_all), np.concatenate(num_all))
    return CheckResult(name, seed, worst)


def _contracted(op: Callable[[list[Tensor]], Tensor], arrays: list[np.ndarray], rng: np.random.Generator):
    """Scalar ``sum(op(t) * w)`` with a weight ``w`` drawn once per case."""
    with ad.no_grad(), ad.default_dtype(np.float64):
        shape = op([Tensor(a) for a in arrays]).shape
    w = rng.standard_normal(shape)
    return lambda t: ad.sum(ad.mul(op(t), Tensor(w)))


def _away_from_zero(rng, shape, gap=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x) + 0.0


def _distinct(rng, shape):
    """Values whose pairwise gaps along the last axis are comfortably above eps."""
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * 0.1 + rng.uniform(-0.02, 0.02, shape)).astype(np.float64)


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    n = rng.standard_normal
    idx = rng.integers(0, 5, size=7)
    bidx = rng.integers(0, 6, size=(2, 4))
    nbrs = np.stack([np.stack([rng.choice(6, 3, replace=False) for _ in range(4)]) for _ in range(2)])
    return {
        "matmul": (lambda t: ad.matmul(t[0], t[1]), [n((3, 4)), n((4, 2))]),
        "matmul_batched": (lambda t: ad.matmul(t[0], t[1]), [n((2, 3, 4)), n((2, 4, 5))]),
        "matmul_weight": (lambda t: ad.matmul(t[0], t[1]), [n((2, 3, 4)), n((4, 5))]),
        "add": (lambda t: ad.add(t[0], t[1]), [n((2, 3, 4)), n((3, 4))]),
        "sub": (lambda t: ad.sub(t[0], t[1]), [n((2, 3)), n((2, 3))]),
        "mul": (lambda t: ad.mul(t[0], t[1]), [n((2, 3, 4)), n((4,))]),
        "neg": (lambda t: ad.neg(t[0]), [n((3, 2))]),
        "scale": (lambda t: ad.scale(t[0], 0.37), [n((3, 2))]),
        "relu": (lambda t: ad.relu(t[0]), [_away_from_zero(rng, (4, 5))]),
        "gelu": (lambda t: ad.gelu(t[0]), [n((4, 5))]),
        "tanh": (lambda t: ad.tanh(t[0]), [n((4, 5))]),
        "sigmoid": (lambda t: ad.sigmoid(t[0]), [n((4, 5))]),
        "softmax": (lambda t: ad.softmax(t[0], axis=-1), [n((3, 5))]),
        "softmax_axis0": (lambda t: ad.softmax(t[0], axis=0), [n((3, 5))]),
        "reduce_max": (lambda t: ad.reduce_max(t[0], axis=0), [_distinct(rng, (5, 4))]),
        "sum": (lambda t: ad.sum(t[0], axis=1), [n((3, 4))]),
        "mean": (lambda t: ad.mean(t[0], axis=0, keepdims=True), [n((3, 4))]),
        "concat": (lambda t: ad.concat([t[0], t[1]], axis=1), [n((2, 3)), n((2, 1))]),
        "gather": (lambda t: ad.gather(t[0], idx, axis=0), [n((5, 3))]),
        "batch_gather": (lambda t: ad.batch_gather(t[0], bidx), [n((2, 6, 3))]),
        "gather_max": (lambda t: ad.gather_max(t[0], nbrs), [_distinct(rng, (2, 6, 3))]),
        "layer_norm": (lambda t: ad.layer_norm(t[0], t[1], t[2]), [n((3, 6)), n(6), n(6)]),
        "row_norm": (lambda t: ad.row_norm(t[0]), [n((4, 3))]),
        "reshape": (lambda t: ad.reshape(t[0], (6, 2)), [n((3, 4))]),
        "swapaxes": (lambda t: ad.swapaxes(t[0], 0, 2), [n((2, 3, 4))]),
        "broadcast_to": (lambda t: ad.broadcast_to(t[0], (2, 3, 4)), [n((3, 1))]),
    }


OP_NAMES = tuple(_op_cases(np.random.default_rng(0)).keys())


def check_ops(seed: int, names=None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cases = _op_cases(rng)
    out = []
    for name, (op, arrays) in cases.items():
        build = _contracted(op, arrays, rng)
        if names is None or name in names:
            out.append(check_function(name, build, arrays, seed))
    return out


def tiny_model_config():
    from .config import ModelConfig

    return ModelConfig(
        n_tokens=16, channels=12, k=4, enc_depth=1, dec_depth=1, heads=2, ffn_mult=2, edge_channels=8,
        n_template=16, pool_template=8, pool_input=12, up_factor=4, sphere_channels=4, coarse_hidden=16,
        corres_channels=8, vote_channels=8, fold_hidden=8,
    )


def check_end_to_end(seed: int, n_coords: int = 24, eps: float = 1e-6) -> CheckResult:
    """Full training loss of a tiny float64 model vs finite differences on sampled parameters.

    The fold head starts at zero, so it is randomized first to give every
    path a nonzero gradient.
    """
    from .metrics import training_loss
    from .model import CompletionModel

    rng = np.random.default_rng(seed)
    with ad.default_dtype(np.float64):
        cfg = tiny_model_config()
        model = CompletionModel(cfg, seed=seed)
        model.fold.head.weight.data = rng.standard_normal(model.fold.head.weight.shape) * 0.3
        partial = rng.standard_normal((1, 40, 3))
        gt = rng.standard_normal((1, 48, 3))
        sphere = rng.standard_normal((cfg.n_tokens, 3))
        sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)

        def loss():
            out = model(partial, sphere)
            return training_loss(out.fine_template, out.dense, gt)[0]

        model.zero_grad()
        ad.backward(loss())
        params = model.named_parameters()
        params = [(nm, p) for nm, p in params]
        picks = rng.choice(len(params), size=min(n_coords, len(params)), replace=False)
        tape, num = [], []
        for pi in picks:
            _, p = params[pi]
            i = int(rng.integers(p.size))
            tape.append(0.0 if p.grad is None else float(p.grad.reshape(-1)[i]))
            flat = p.data.reshape(-1)
            old = flat[i]
            with ad.no_grad():
                flat[i] = old + eps
                fp = loss().item()
                flat[i] = old - eps
                fm = loss().item()
            flat[i] = old
            num.append((fp - fm) / (2 * eps))
    return CheckResult("end_to_end", seed, rel_error(np.array(tape), np.array(num)))


def run_suite(seeds, include_end_to_end: bool = True, names=None) -> list[CheckResult]:
    results = []
    for s in seeds:
        results.extend(check_ops(s, names))
        if include_end_to_end and (names is None or "end_to_end" in names):
            results.append(check_end_to_end(s))
    return results
