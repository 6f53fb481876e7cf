"""``ptcomplete`` command line: gen-data, train, eval, complete, grad-check.

Failures print one JSON object on stderr, for example
``{"error": "ConfigError", "message": "unknown config key 'foo'"}``,
and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

THREADS_ENV = "PTCOMPLETE_THREADS"
MANIFEST_NAME = "manifest.jsonl"


class CliError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, status=2)


def _fail(kind: str, message: str, status: int = 1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    raise SystemExit(status)


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _manifest_path(data) -> Path:
    p = Path(data)
    return p / MANIFEST_NAME if p.is_dir() else p


def _load_pairs(data, mode: str | None = None):
    from .data import MODES, load_manifest

    if mode is not None and mode not in MODES:
        raise CliError(f"unknown mode {mode!r}; choose from {sorted(MODES)}")
    descs = load_manifest(_manifest_path(data))
    if mode is not None:
        descs = [d for d in descs if d.mode == mode]
    if not descs:
        raise CliError("no samples selected from the dataset")
    return [d.load() for d in descs]


def _overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise CliError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _model_from_checkpoint(path):
    from .checkpoint import load_checkpoint, read_checkpoint
    from .config import model_config_from_dict
    from .model import CompletionModel

    cfg = model_config_from_dict(read_checkpoint(path)["config"])
    model = CompletionModel(cfg)
    load_checkpoint(path, model)
    return model


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .cloud_io import write_cloud
    from .data import SHAPES, gen_synthetic_pair, mode_of, write_manifest

    shapes = [s.strip() for s in args.shapes.split(",") if s.strip()]
    unknown = [s for s in shapes if s not in SHAPES]
    if unknown or not shapes:
        raise CliError(f"unknown shapes {unknown}; choose from {list(SHAPES)}")
    if args.count < 1:
        raise CliError("--count must be positive")
    out = Path(args.out)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    records = []
    for si, shape in enumerate(shapes):
        for i in range(args.count):
            seed = int(np.random.SeedSequence([args.seed, si, i]).generate_state(1)[0])
            sid = f"{shape}-{i:04d}"
            pair = gen_synthetic_pair(shape, None, args.n_partial, args.n_complete, seed, sample_id=sid)
            part, comp = f"clouds/{sid}.partial.ply", f"clouds/{sid}.complete.ply"
            write_cloud(pair.partial, out / part)
            write_cloud(pair.complete, out / comp)
            records.append({"id": sid, "category": shape, "partial": part, "complete": comp,
                            "mode": mode_of(pair.keep_fraction)})
    write_manifest(out / MANIFEST_NAME, records)
    print(json.dumps({"samples": len(records), "manifest": str(out / MANIFEST_NAME)}))
    return 0


def cmd_train(args) -> int:
    from .config import dump_config, load_config
    from .model import CompletionModel
    from .trainer import Trainer

    overrides = _overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.steps is not None:
        overrides["total_steps"] = str(args.steps)
    mcfg, tcfg = load_config(args.config, overrides)
    if args.print_config:
        sys.stdout.write(dump_config(mcfg, tcfg))
        return 0
    if args.data is None or args.out is None:
        raise CliError("train needs --data and --out")
    pairs = _load_pairs(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(mcfg, tcfg), encoding="utf-8")
    trainer = Trainer(CompletionModel(mcfg, seed=tcfg.seed), tcfg)
    if args.resume:
        trainer.resume(args.resume)
    trainer.fit(pairs, out_dir=out, log_path=out / "train_log.jsonl")
    trainer.save(out / "final.ckpt")
    last = trainer.log[-1] if trainer.log else {"step": trainer.step}
    print(json.dumps({"checkpoint": str(out / "final.ckpt"), **last}))
    return 0


def cmd_eval(args) -> int:
    from .trainer import evaluate

    model = _model_from_checkpoint(args.ckpt)
    report = evaluate(model, _load_pairs(args.data, args.mode), tau=args.tau)
    if args.json:
        sys.stdout.write(report.to_records())
    else:
        print(report.to_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text(report.to_records(), encoding="utf-8")
        (out / "metrics.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    return 0


def cmd_complete(args) -> int:
    from . import geometry
    from .cloud_io import read_cloud, write_cloud

    model = _model_from_checkpoint(args.ckpt)
    pc = read_cloud(args.inp)
    if pc.count == 0:
        raise CliError("input cloud is empty")
    center, scale = np.zeros(3), 1.0
    if args.normalize:
        pc, center, scale = geometry.normalize_cloud(pc)
    dense = model.complete(pc.points)
    result = geometry.denormalize_cloud(dense, center, scale)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cloud(result, out, args.format)
    print(json.dumps({"points": result.count, "out": str(out)}))
    return 0


def cmd_grad_check(args) -> int:
    from . import gradcheck

    if args.module == "all":
        names = None
    elif args.module == "ops":
        names = set(gradcheck.OP_NAMES)
    elif args.module == "end_to_end" or args.module in gradcheck.OP_NAMES:
        names = {args.module}
    else:
        raise CliError(f"unknown module {args.module!r}; choose all, ops, end_to_end or one of {list(gradcheck.OP_NAMES)}")
    seeds = range(args.seed, args.seed + args.seeds)
    results = gradcheck.run_suite(seeds, include_end_to_end=True, names=names)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name} seed={r.seed} rel_error={r.rel_error:.3e}")
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks within {gradcheck.TOLERANCE:g}")
    if failed:
        worst = max(failed, key=lambda r: r.rel_error)
        raise CliError(f"{len(failed)} gradient checks failed; worst {worst.name} seed={worst.seed} "
                       f"rel_error={worst.rel_error:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ptcomplete", description="Template-guided point cloud completion")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic primitive dataset and manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--shapes", default="sphere,box,cylinder,cone,torus")
    g.add_argument("--count", type=int, default=4, help="samples per shape")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-partial", type=int, default=2048)
    g.add_argument("--n-complete", type=int, default=2048)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--resume")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="shorthand for total_steps=N")
    t.add_argument("--print-config", action="store_true", help="print the merged config and exit")
    t.add_argument("overrides", nargs="*", metavar="key=value")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report CD-l1, CD-l2 and F-Score")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=["easy", "median", "hard"])
    e.add_argument("--tau", type=float, default=0.01)
    e.add_argument("--json", action="store_true", help="print JSON lines instead of the table")
    e.add_argument("--out", help="also write metrics.jsonl and metrics.txt here")
    e.add_argument("--seed", type=int, default=0, help="accepted for symmetry; evaluation is seed-free")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("complete", help="complete a single cloud file")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--format", choices=["ply", "xyz"])
    c.add_argument("--normalize", action="store_true",
                   help="center and scale the input by its own bounds, and map the output back")
    c.add_argument("--seed", type=int, default=0, help="accepted for symmetry; inference is seed-free")
    c.set_defaults(func=cmd_complete)

    k = sub.add_parser("grad-check", help="finite-difference gradient suite")
    k.add_argument("--module", default="all")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    k.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # every failure becomes one parsable line
        _fail(type(exc).__name__, str(exc).replace("\n", " "))


if __name__ == "__main__":
    sys.exit(main())
