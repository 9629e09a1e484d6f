"""Command-line entry point.

Subcommands: gen-data, pretrain, eval-retrieval, probe, ablate, gradcheck,
selfcheck. Every run writes ``resolved_config.json`` (all defaults merged
with overrides) under ``--out``; re-running from that file reproduces the
results bit-exactly. Exit codes: 0 success, 1 validation error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
_DATASET_STREAM = 0xD


class _CliError(Exception):
    pass


def _parse_weights(text: str) -> dict[int, float]:
    out = {}
    try:
        for part in text.split(","):
            k, v = part.split("=")
            out[int(k)] = float(v)
    except ValueError:
        raise _CliError(
            f"--weights expects 'scale=value,...', got {text!r}") from None
    return out


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hdc",
        description="decoupled spatial/temporal contrastive video "
                    "representation learning")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="JSON run config")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(sp)

    sp = sub.add_parser("pretrain", help="self-supervised pretraining")
    common(sp)
    sp.add_argument("--data", default=None, help="existing dataset file")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--weights", type=str, default=None,
                    help="per-scale loss weights, e.g. 3=0.25,4=0.5,5=1")
    sp.add_argument("--resume", default=None, help="checkpoint to resume")

    sp = sub.add_parser("eval-retrieval", help="nearest-neighbor retrieval")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", default=None)

    sp = sub.add_parser("probe", help="linear probe on frozen embeddings")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", default=None)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--lr", type=float, default=0.5)

    sp = sub.add_parser("ablate", help="loss-structure ablation grid")
    common(sp)
    sp.add_argument("--data", default=None)
    sp.add_argument("--seeds", type=str, default="0,1,2")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--full-grid", action="store_true",
                    help="all grid rows (default: the acceptance subset)")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(sp, config_required=False)

    sp = sub.add_parser("selfcheck", help="fast oracle suite")
    common(sp, config_required=False)
    return p


def emit_summary(out_dir: Path, **fields):
    payload = {"schema_version": SCHEMA_VERSION}
    payload.update(fields)
    (out_dir / "summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def emit_retrieval_csv(path: Path, accuracies: dict[int, float]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "accuracy"])
        for k in sorted(accuracies):
            w.writerow([k, f"{accuracies[k]:.6f}"])


def _load_videos(args, cfg):
    from .data import generate_synthetic, load_dataset

    if getattr(args, "data", None):
        return load_dataset(args.data)
    return generate_synthetic(cfg.dataset, (cfg.seed, _DATASET_STREAM))


def _cmd_gen_data(args) -> int:
    from .config import apply_overrides, load_config, write_resolved
    from .data import generate_synthetic

    cfg, ev = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, ev, out)
    path = out / "dataset.hdcv"
    videos = generate_synthetic(cfg.dataset, (cfg.seed, _DATASET_STREAM),
                                path=path)
    emit_summary(out, command="gen-data", dataset_path=str(path),
                 num_videos=len(videos))
    print(f"wrote {path} ({len(videos)} videos)")
    return 0


def _cmd_pretrain(args) -> int:
    from .config import apply_overrides, load_config, write_resolved
    from .trainer import pretrain

    cfg, ev = load_config(args.config)
    weights = _parse_weights(args.weights) if args.weights else None
    cfg = apply_overrides(cfg, seed=args.seed, steps=args.steps,
                          batch=args.batch, tau=args.tau, weights=weights)
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, ev, out)
    videos = _load_videos(args, cfg)
    t0 = time.perf_counter()
    result = pretrain(cfg, videos, out_dir=out, resume_from=args.resume)
    final = result.metrics[-1]["L_total"] if result.metrics else float("nan")
    emit_summary(out, command="pretrain", steps=result.opt_state.step,
                 total_loss_final=final,
                 wall_seconds=round(time.perf_counter() - t0, 3),
                 checkpoint=str(result.checkpoint_path),
                 metrics=str(result.metrics_path))
    print(f"pretrained {result.opt_state.step} steps; final loss {final:.4f}"
          if result.metrics else "no steps run")
    return 0


def _eval_records(args, cfg, ev):
    from .evaluate import extract_embeddings, split_query_gallery
    from .trainer import load_checkpoint

    params, _ = load_checkpoint(args.ckpt)
    videos = _load_videos(args, cfg)
    records = extract_embeddings(params, cfg.encoder, videos, cfg.clip_len,
                                 cfg.family_o.crop_output,
                                 label_mode=ev.label_mode)
    queries, gallery = split_query_gallery(records, ev.query_percent)
    return queries, gallery


def _cmd_eval_retrieval(args) -> int:
    from .config import apply_overrides, load_config, write_resolved
    from .evaluate import nn_retrieval

    cfg, ev = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, ev, out)
    queries, gallery = _eval_records(args, cfg, ev)
    acc = nn_retrieval(queries, gallery, ev.ks)
    emit_retrieval_csv(out / "retrieval.csv", acc)
    fields = {f"top{k}": acc[k] for k in acc}
    emit_summary(out, command="eval-retrieval", label_mode=ev.label_mode,
                 queries=len(queries), gallery=len(gallery), **fields)
    for k in sorted(acc):
        print(f"top-{k}: {acc[k]:.3f}")
    return 0


def _cmd_probe(args) -> int:
    from .config import apply_overrides, load_config, write_resolved
    from .evaluate import linear_probe

    cfg, ev = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, ev, out)
    queries, gallery = _eval_records(args, cfg, ev)
    acc = linear_probe(gallery, queries, epochs=args.epochs, lr=args.lr)
    emit_summary(out, command="probe", label_mode=ev.label_mode,
                 train_records=len(gallery), test_records=len(queries),
                 accuracy=acc)
    print(f"probe accuracy ({ev.label_mode}): {acc:.3f}")
    return 0


def _cmd_ablate(args) -> int:
    from .ablation import acceptance_grid, default_grid, run_ablation_grid
    from .config import apply_overrides, load_config, write_resolved

    cfg, ev = load_config(args.config)
    weights = None
    cfg = apply_overrides(cfg, seed=args.seed, steps=args.steps,
                          batch=args.batch, tau=args.tau, weights=weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, ev, out)
    videos = _load_videos(args, cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    grid = default_grid() if args.full_grid else acceptance_grid()
    report = run_ablation_grid(cfg, grid, seeds, videos, ks=ev.ks,
                               verbose=True)
    report.to_csv(out / "ablation.csv")
    (out / "ablation.txt").write_text(report.to_text() + "\n")
    emit_summary(out, command="ablate", seeds=seeds,
                 wall_seconds=round(report.elapsed_seconds, 3),
                 rows={r.row.name: r.mean("composite") for r in report.rows})
    print(report.to_text())
    print(f"elapsed: {report.elapsed_seconds / 60:.1f} min")
    return 0


def _cmd_gradcheck(args) -> int:
    from .checks import run_gradchecks

    t0 = time.perf_counter()
    results = run_gradchecks(verbose=True)
    ok = all(r.passed for _, r in results)
    print(f"gradient checks {'passed' if ok else 'FAILED'} "
          f"in {time.perf_counter() - t0:.1f}s")
    return 0 if ok else 2


def _cmd_selfcheck(args) -> int:
    from .checks import run_selfcheck

    results = run_selfcheck(verbose=True)
    return 0 if all(r.ok for r in results) else 2


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pretrain": _cmd_pretrain,
    "eval-retrieval": _cmd_eval_retrieval,
    "probe": _cmd_probe,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "selfcheck": _cmd_selfcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad flags; spec reserves 1 for validation
        return 0 if e.code == 0 else 1
    from .augment import AugmentationError
    from .config import ConfigError
    from .data import DatasetError
    from .encoder import EncoderError
    from .evaluate import EvalError
    from .loss import LossError
    from .tensor import NonFiniteError, TensorError
    from .trainer import TrainerError

    validation_errors = (ConfigError, DatasetError, EncoderError, LossError,
                         AugmentationError, EvalError, TrainerError,
                         TensorError, _CliError, FileNotFoundError)
    try:
        return _COMMANDS[args.command](args)
    except NonFiniteError as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    except validation_errors as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
