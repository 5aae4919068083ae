"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (or failed gradient check),
2 bad configuration or arguments.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .archive import atomic_write_bytes, load_weights, save_weights
from .config import ConfigError, RunConfig, load_run_config
from .data import ClipStore, FoldPlan, NormStats, make_folds_from_manifest, read_manifest
from .model import build_model, count_params, expected_param_count
from .tensor import make_rng
from .train import cv_summary, evaluate, format_accuracy, train_fold

GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


def _write_text(path, text):
    atomic_write_bytes(path, text.encode())


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def _emit(args, human: str, machine: dict, name: str):
    """Print the human table (or JSON with --json); mirror JSON into --out."""
    if getattr(args, "json", False):
        print(json.dumps(machine, indent=2))
    else:
        print(human)
    if getattr(args, "out", None):
        _write_json(os.path.join(args.out, f"{name}.json"), machine)


def _load_manifest(cfg: RunConfig):
    path = cfg.data.manifest
    if not path:
        raise UsageError("data.manifest is not set")
    if not os.path.isfile(path):
        raise UsageError(f"manifest not found: {path}")
    try:
        return read_manifest(path, cfg.data.num_frames)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"invalid manifest {path}: {exc}") from exc


def _fold_plan(args, cfg, manifest):
    if getattr(args, "folds_file", None):
        with open(args.folds_file) as fh:
            return FoldPlan.from_json(fh.read())
    return make_folds_from_manifest(manifest, cfg.data.folds, cfg.data.fold_seed)


def _echo(msg):
    print(msg, file=sys.stderr)


def cmd_count_params(args, cfg: RunConfig):
    model = build_model(cfg.model)  # zero-filled: counting needs no init
    total, parts = count_params(model)
    closed, _ = expected_param_count(cfg.model)
    if closed != total:
        raise RuntimeError(f"built model has {total} parameters, closed form says {closed}")
    lines = [f"{name:<12s}{n:>14,d}" for name, n in parts.items()]
    lines.append(f"{'total':<12s}{total:>14,d}")
    _emit(args, "\n".join(lines), {"total": total, "components": parts}, "count_params")
    return 0


def cmd_make_folds(args, cfg: RunConfig):
    manifest = _load_manifest(cfg)
    plan = make_folds_from_manifest(manifest, cfg.data.folds, cfg.data.fold_seed)
    target = args.output or (os.path.join(args.out, "folds.json") if args.out else None)
    if target:
        plan.save(target)
    human = "\n".join(f"fold {i}: {' '.join(f)}" for i, f in enumerate(plan.folds))
    _emit(args, human, json.loads(plan.to_json()), "make_folds")
    return 0


def _split(args, cfg, manifest):
    ids = [e.clip_id for e in manifest.entries]
    if args.fold is None:
        return ids, []
    plan = _fold_plan(args, cfg, manifest)
    if not 0 <= args.fold < plan.k:
        raise UsageError(f"--fold must be in [0, {plan.k})")
    return plan.split(args.fold)


def cmd_train(args, cfg: RunConfig):
    manifest = _load_manifest(cfg)
    if not args.out:
        raise UsageError("train needs --out")
    train_ids, test_ids = _split(args, cfg, manifest)
    store = ClipStore(manifest.entries, cfg.pipeline())
    stats = store.norm_stats(train_ids)
    model = build_model(cfg.model, make_rng(cfg.train.seed))
    log = train_fold(model, store, train_ids, stats, cfg.train, log_every=args.log_every, echo=_echo)
    os.makedirs(args.out, exist_ok=True)
    result = {"train_clips": len(train_ids), "final_loss": log.losses[-1] if log.losses else None}
    if test_ids:
        res = evaluate(model, store, test_ids, stats)
        log.fold_accuracy[str(args.fold)] = res.accuracy
        result["test_accuracy"] = res.accuracy
    save_weights(model, os.path.join(args.out, "checkpoint.fnl"))
    _write_json(os.path.join(args.out, "norm_stats.json"), {"mean": stats.mean, "std": stats.std})
    _write_text(os.path.join(args.out, "config.ini"), cfg.to_ini())
    log.save(os.path.join(args.out, "runlog.jsonl"))
    human = "\n".join(f"{k}: {v}" for k, v in result.items())
    _emit(args, human, result, "train")
    return 0


def cmd_eval(args, cfg: RunConfig):
    manifest = _load_manifest(cfg)
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    norm_path = args.norm or os.path.join(os.path.dirname(args.checkpoint), "norm_stats.json")
    stats = NormStats()
    if os.path.isfile(norm_path):
        with open(norm_path) as fh:
            stats = NormStats(**json.load(fh))
    _, test_ids = _split(args, cfg, manifest)
    ids = test_ids or [e.clip_id for e in manifest.entries]
    model = build_model(cfg.model)
    load_weights(model, args.checkpoint)
    store = ClipStore([e for e in manifest.entries if e.clip_id in set(ids)], cfg.pipeline())
    res = evaluate(model, store, ids, stats)
    lines = [f"{cid:<24s} p={p:.4f} label={y}" for cid, p, y in res.predictions]
    lines.append(f"accuracy: {res.accuracy:.4f} ({len(ids)} clips)")
    machine = {
        "accuracy": res.accuracy,
        "predictions": [{"clip_id": c, "p": p, "label": y} for c, p, y in res.predictions],
    }
    _emit(args, "\n".join(lines), machine, "eval")
    return 0


def cmd_crossval(args, cfg: RunConfig):
    manifest = _load_manifest(cfg)
    plan = _fold_plan(args, cfg, manifest)
    store = ClipStore(manifest.entries, cfg.pipeline())
    accs, rows = [], []
    for k in range(plan.k):
        train_ids, test_ids = plan.split(k)
        stats = store.norm_stats(train_ids)
        model = build_model(cfg.model, make_rng(cfg.train.seed + k))
        _echo(f"fold {k}: training on {len(train_ids)} clips")
        log = train_fold(model, store, train_ids, stats, cfg.train, log_every=args.log_every, echo=_echo)
        res = evaluate(model, store, test_ids, stats)
        log.fold_accuracy[str(k)] = res.accuracy
        accs.append(res.accuracy)
        rows.append({"fold": k, "n_test": len(test_ids), "accuracy": res.accuracy,
                     "final_loss": log.losses[-1] if log.losses else None})
        if args.out:
            log.save(os.path.join(args.out, f"fold{k}_runlog.jsonl"))
    mean, std = cv_summary(accs)
    lines = [f"{'fold':<6s}{'clips':>6s}{'accuracy':>10s}"]
    lines += [f"{r['fold']:<6d}{r['n_test']:>6d}{100 * r['accuracy']:>9.1f}%" for r in rows]
    lines.append(f"mean ± std: {format_accuracy(mean, std)}")
    machine = {"folds": rows, "mean": mean, "std": std, "summary": format_accuracy(mean, std)}
    if args.out:
        plan.save(os.path.join(args.out, "folds.json"))
    _emit(args, "\n".join(lines), machine, "crossval")
    return 0


def default_gradcheck_subjects():
    return [
        "conv2d", "conv2d-strided", "maxpool", "relu", "fc", "batchnorm", "batchnorm-spatial",
        "convlstm-1", "convlstm-2", "convlstm-3", "convlstm-4",
        "lstm-1", "lstm-2", "lstm-3", "lstm-4",
        "model-convlstm", "model-lstm",
    ]


def cmd_gradcheck(args, cfg: RunConfig):
    from .gradcheck import grad_check
    from .subjects import make_subject

    names = args.subjects or default_gradcheck_subjects()
    rows, failed = [], False
    for name in names:
        try:
            subject, x, kw = make_subject(name, seed=args.seed)
        except KeyError as exc:
            raise UsageError(str(exc)) from exc
        rep = grad_check(subject, x, seed=args.seed, **kw)
        ok = rep.max_error <= GRAD_TOL
        failed |= not ok
        rows.append({"subject": name, "max_error": rep.max_error, "worst": rep.worst, "passed": ok})
    lines = [f"{'subject':<20s}{'max rel err':>14s}  worst tensor"]
    lines += [
        f"{r['subject']:<20s}{r['max_error']:>14.3e}  {r['worst']}{'' if r['passed'] else '  FAIL'}"
        for r in rows
    ]
    _emit(args, "\n".join(lines), {"tolerance": GRAD_TOL, "results": rows}, "gradcheck")
    return 1 if failed else 0


def cmd_bench(args, cfg: RunConfig):
    rng = make_rng(cfg.train.seed)
    model = build_model(cfg.model, rng).eval()
    fs = cfg.model.frame_size
    t = cfg.data.num_frames - (1 if cfg.model.input_mode == "diff" else 0)
    x = rng.standard_normal((args.clips, t, 3, fs, fs)).astype(np.float32)
    model.forward(x[:1])
    start = time.perf_counter()
    for i in range(args.repeats):
        model.forward(x)
    elapsed = time.perf_counter() - start
    fps = args.repeats * args.clips * t / elapsed
    machine = {"frames_per_second": fps, "clips": args.clips, "frames_per_clip": t,
               "frame_size": fs, "seconds": elapsed}
    _emit(args, f"{fps:.1f} frames/s (eval forward, {args.clips} clips x {t} frames, {fs}x{fs})",
          machine, "bench")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
    "count-params": cmd_count_params,
    "gradcheck": cmd_gradcheck,
    "make-folds": cmd_make_folds,
    "bench": cmd_bench,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--json", action="store_true", help="print machine-readable JSON")

    parser = argparse.ArgumentParser(prog="fightnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--fold", type=int, help="hold out this fold (default: train on all clips)")
    p.add_argument("--folds-file", help="FoldPlan JSON (default: generated from config)")
    p.add_argument("--log-every", type=int, default=100)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--norm", help="norm_stats.json (default: next to checkpoint)")
    p.add_argument("--fold", type=int, help="evaluate only this fold")
    p.add_argument("--folds-file")

    p = sub.add_parser("crossval", parents=[common], help="k-fold cross-validation")
    p.add_argument("--folds-file")
    p.add_argument("--log-every", type=int, default=0)

    sub.add_parser("count-params", parents=[common], help="parameter audit")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("subjects", nargs="*", help=f"subjects (default: {' '.join(default_gradcheck_subjects())})")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("make-folds", parents=[common], help="write a stratified fold plan")
    p.add_argument("--output", help="FoldPlan JSON path")

    p = sub.add_parser("bench", parents=[common], help="eval-mode throughput")
    p.add_argument("--clips", type=int, default=2)
    p.add_argument("--repeats", type=int, default=3)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_run_config(args.config, args.overrides)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
