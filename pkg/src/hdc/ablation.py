"""Ablation grid: pretrain loss-structure variants across seeds and score
them by nearest-neighbor retrieval.

Each grid row names the scales at which the spatial / temporal subtasks are
enabled and their weights. Rows with nothing enabled (or all-zero weights)
perform no parameter updates, so they are evaluated at initialization --
the training-from-scratch baseline.

Setting ``HDC_ABLATION_CACHE`` to a directory caches checkpoints keyed by
the resolved (config, seed); checkpoint round-trips are bit-exact, so a
cache hit reproduces the fresh run identically. Intended for repeated local
runs; leave unset for a from-scratch evaluation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .data import Video
from .evaluate import (extract_embeddings, nn_retrieval, relabel,
                       split_query_gallery)
from .loss import LossConfig
from .trainer import RunConfig, load_checkpoint, pretrain, save_checkpoint

DEFAULT_KS = (1, 5, 10)
LABEL_MODES = ("composite", "appearance", "motion")


@dataclass(frozen=True)
class GridRow:
    name: str
    sc_scales: tuple[int, ...]
    tc_scales: tuple[int, ...]
    alphas: dict
    betas: dict


def default_grid() -> list[GridRow]:
    """The standard loss-structure comparison: single-scale subtasks alone
    and combined, deeper-scale stacks with flat and depth-decaying weights,
    and the untrained baseline."""
    flat = {3: 1.0, 4: 1.0, 5: 1.0}
    decayed = {3: 0.25, 4: 0.5, 5: 1.0}
    half = {4: 0.5, 5: 1.0}
    return [
        GridRow("sc5", (5,), (), {5: 1.0}, {}),
        GridRow("tc5", (), (5,), {}, {5: 1.0}),
        GridRow("sc5+tc5", (5,), (5,), {5: 1.0}, {5: 1.0}),
        GridRow("sc45+tc45 flat", (4, 5), (4, 5), flat, flat),
        GridRow("sc45+tc45 decayed", (4, 5), (4, 5), half, half),
        GridRow("sc345+tc345 flat", (3, 4, 5), (3, 4, 5), flat, flat),
        GridRow("scratch", (), (), {}, {}),
        GridRow("hdc full", (3, 4, 5), (3, 4, 5), decayed, decayed),
    ]


def acceptance_grid() -> list[GridRow]:
    """The four pretrained variants compared by the acceptance criteria,
    plus the untrained baseline."""
    rows = default_grid()
    keep = {"sc5", "tc5", "sc5+tc5", "scratch", "hdc full"}
    return [r for r in rows if r.name in keep]


@dataclass
class AblationRowResult:
    row: GridRow
    # accuracies[label_mode][k] = one value per seed
    accuracies: dict = field(default_factory=dict)

    def per_seed(self, mode: str = "composite", k: int = 1) -> list[float]:
        return self.accuracies[mode][k]

    def mean(self, mode: str = "composite", k: int = 1) -> float:
        vals = self.accuracies[mode][k]
        return sum(vals) / len(vals)

    def sd(self, mode: str = "composite", k: int = 1) -> float:
        vals = self.accuracies[mode][k]
        m = self.mean(mode, k)
        return (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5


@dataclass
class AblationReport:
    rows: list[AblationRowResult]
    seeds: tuple[int, ...]
    ks: tuple[int, ...]
    elapsed_seconds: float

    def to_text(self) -> str:
        name_w = max(len(r.row.name) for r in self.rows) + 2
        lines = [f"{'variant':{name_w}s} {'SC':12s} {'TC':12s} "
                 f"{'top1 composite':>16s} {'top1 appear.':>14s} "
                 f"{'top1 motion':>12s}"]
        for r in self.rows:
            sc = ",".join(map(str, r.row.sc_scales)) or "-"
            tc = ",".join(map(str, r.row.tc_scales)) or "-"
            lines.append(
                f"{r.row.name:{name_w}s} {sc:12s} {tc:12s} "
                f"{r.mean('composite'):8.3f} ±{r.sd('composite'):5.3f}  "
                f"{r.mean('appearance'):8.3f}      "
                f"{r.mean('motion'):8.3f}")
        return "\n".join(lines)

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            header = ["variant", "sc_scales", "tc_scales", "alphas", "betas"]
            for mode in LABEL_MODES:
                for k in self.ks:
                    header += [f"top{k}_{mode}_mean", f"top{k}_{mode}_sd"]
            w.writerow(header)
            for r in self.rows:
                row = [r.row.name,
                       ",".join(map(str, r.row.sc_scales)),
                       ",".join(map(str, r.row.tc_scales)),
                       json.dumps(r.row.alphas, sort_keys=True),
                       json.dumps(r.row.betas, sort_keys=True)]
                for mode in LABEL_MODES:
                    for k in self.ks:
                        row += [f"{r.mean(mode, k):.6f}",
                                f"{r.sd(mode, k):.6f}"]
                w.writerow(row)


def apply_row(config: RunConfig, row: GridRow, seed: int) -> RunConfig:
    loss = LossConfig(tau=config.loss.tau, alphas=dict(row.alphas),
                      betas=dict(row.betas), spatial_scales=row.sc_scales,
                      temporal_scales=row.tc_scales)
    cfg = replace(config, loss=loss, seed=seed)
    trains = any(row.alphas.values()) or any(row.betas.values())
    if not trains:
        cfg = replace(cfg, steps=0)  # no updates would occur anyway
    return cfg


def _cache_key(cfg: RunConfig) -> Optional[Path]:
    root = os.environ.get("HDC_ABLATION_CACHE")
    if not root:
        return None
    from .config import config_to_dict  # late import; config imports trainer

    digest = hashlib.sha256(
        json.dumps(config_to_dict(cfg), sort_keys=True).encode()).hexdigest()
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path / f"{digest[:24]}.hdck"


def train_variant(config: RunConfig, row: GridRow, seed: int,
                  videos: Sequence[Video]):
    """Pretrain one grid variant (or fetch its cached checkpoint)."""
    cfg = apply_row(config, row, seed)
    cache = _cache_key(cfg)
    if cache is not None and cache.exists():
        params, _ = load_checkpoint(cache)
        return params
    result = pretrain(cfg, videos)
    if cache is not None:
        save_checkpoint(result.params, result.opt_state, cache)
    return result.params


def run_ablation_grid(config: RunConfig, grid: Sequence[GridRow],
                      seeds: Sequence[int], videos: Sequence[Video],
                      ks: Sequence[int] = DEFAULT_KS,
                      verbose: bool = False) -> AblationReport:
    """Pretrain every (row, seed) and report retrieval accuracy per label
    axis at each k."""
    t0 = time.perf_counter()
    ks = tuple(sorted(ks))
    crop = config.family_o.crop_output
    results = []
    for row in grid:
        acc = {mode: {k: [] for k in ks} for mode in LABEL_MODES}
        for seed in seeds:
            params = train_variant(config, row, seed, videos)
            records = extract_embeddings(params, config.encoder, videos,
                                         config.clip_len, crop,
                                         label_mode="composite")
            for mode in LABEL_MODES:
                rec = records if mode == "composite" else relabel(
                    records, videos, mode)
                q, g = split_query_gallery(rec)
                topk = nn_retrieval(q, g, ks)
                for k in ks:
                    acc[mode][k].append(topk[k])
            if verbose:
                print(f"  {row.name} seed {seed}: "
                      f"top1 {acc['composite'][ks[0]][-1]:.3f}", flush=True)
        results.append(AblationRowResult(row=row, accuracies=acc))
    return AblationReport(rows=results, seeds=tuple(seeds), ks=ks,
                          elapsed_seconds=time.perf_counter() - t0)
