"""Pretraining loop: augmentation -> encoder -> compound contrastive loss
-> SGD, with checkpointing and a metrics stream.

All randomness derives from (seed, stream, step[, video]) seed sequences,
so a (config, seed) pair fully determines the metrics log, and resuming
from a checkpoint continues the identical trajectory.

Every needed clip variant of a step is stacked into one batch for a single
encoder pass; instance normalization keeps each instance independent, so
this is numerically identical to one pass per variant role. Variants not
referenced by any enabled subtask are neither augmented nor encoded.

Checkpoint format: magic ``HDCK``, u16 version, u64 optimizer step, u32
tensor count, then named tensors (u16 name length, utf-8 name, u8 dtype
code, u8 ndim, u32 dims, little-endian payload). Parameter tensors are
stored as ``param/<name>``, momentum buffers as ``velocity/<name>``;
round-trips are bit-exact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .augment import AugmentationFamily, make_triplet
from .data import SyntheticConfig, Video, sample_batch
from .encoder import EncoderConfig, default_toy_config, forward, init_params, \
    pool_and_project
from .loss import LossConfig, LossBreakdown, hd_nce, spatial_contrast_loss, \
    temporal_contrast_loss
from .optim import OptimizerState, sgd_step
from .tensor import NonFiniteError, Tape, Tensor, backward, batch_slice

CKPT_MAGIC = b"HDCK"
CKPT_VERSION = 1

METRIC_COLUMNS = ("step", "lr", "L_total", "L_s_3", "L_t_3", "L_s_4",
                  "L_t_4", "L_s_5", "L_t_5")

_STREAM_BATCH = 0xB
_STREAM_AUG = 0xA
_STREAM_INIT = 0x1


class TrainerError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: SyntheticConfig = field(default_factory=SyntheticConfig)
    encoder: EncoderConfig = field(default_factory=default_toy_config)
    loss: LossConfig = field(default_factory=LossConfig)
    family_o: AugmentationFamily = field(default_factory=AugmentationFamily)
    family_s: AugmentationFamily = field(default_factory=AugmentationFamily)
    family_t: AugmentationFamily = field(default_factory=AugmentationFamily)
    batch_size: int = 16
    clip_len: int = 8
    steps: int = 2000
    lr: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 1e-4
    l2: float = 5e-5
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def validate(self):
        if self.batch_size < 2:
            raise TrainerError("batch_size must be >= 2 (InfoNCE negatives)")
        if self.dataset.frames_per_video < self.clip_len:
            raise TrainerError(
                f"frames_per_video {self.dataset.frames_per_video} < "
                f"clip_len {self.clip_len}")
        for k in self.loss.spatial_scales:
            if k not in self.loss.alphas:
                raise TrainerError(f"spatial scale {k} has no alpha weight")
            if k not in self.encoder.tap_blocks:
                raise TrainerError(f"spatial scale {k} is not a tap block")
        for k in self.loss.temporal_scales:
            if k not in self.loss.betas:
                raise TrainerError(f"temporal scale {k} has no beta weight")
            if k not in self.encoder.tap_blocks:
                raise TrainerError(f"temporal scale {k} is not a tap block")


@dataclass
class PretrainResult:
    params: dict[str, Tensor]
    opt_state: OptimizerState
    metrics: list[dict]
    metrics_path: Optional[Path]
    checkpoint_path: Optional[Path]


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy))


def train_step(videos: Sequence[Video], params: dict[str, Tensor],
               config: RunConfig, step: int) -> LossBreakdown:
    """One optimization step; returns the loss breakdown (subtask sums)."""
    cfg_loss = config.loss
    sc = tuple(sorted(cfg_loss.spatial_scales))
    tc = tuple(sorted(cfg_loss.temporal_scales))
    b = config.batch_size

    batch_videos = sample_batch(videos, b, config.clip_len,
                                _rng(config.seed, _STREAM_BATCH, step))
    families = (config.family_o, config.family_s, config.family_t)
    triplets = [
        make_triplet(v.frames, config.clip_len, families,
                     _rng(config.seed, _STREAM_AUG, step, v.video_id))
        for v in batch_videos
    ]

    roles = ["o"]
    if sc:
        roles.append("s")
    if tc:
        roles.append("t")
    stacks = {"o": [t.u_o for t in triplets],
              "s": [t.u_s for t in triplets],
              "t": [t.u_t for t in triplets]}
    batch = Tensor(np.concatenate(
        [np.stack(stacks[r]) for r in roles]).astype(np.float32))

    for p in params.values():
        p.zero_grad()

    with Tape() as tape:
        pyramid = forward(batch, params, config.encoder)
        role_pyr = {
            r: {k: batch_slice(fmap, i * b, (i + 1) * b)
                for k, fmap in pyramid.items()}
            for i, r in enumerate(roles)
        }
        per_scale = {}
        if sc:
            eo_sp = pool_and_project(
                {k: role_pyr["o"][k] for k in sc}, "o", "spatial",
                params, config.encoder)
            es_sp = pool_and_project(
                {k: role_pyr["s"][k] for k in sc}, "s", "spatial",
                params, config.encoder)
        if tc:
            eo_gl = pool_and_project(
                {k: role_pyr["o"][k] for k in tc}, "o", "global",
                params, config.encoder)
            et_gl = pool_and_project(
                {k: role_pyr["t"][k] for k in tc}, "t", "global",
                params, config.encoder)
        for k in sorted(set(sc) | set(tc)):
            ls = (spatial_contrast_loss(eo_sp, es_sp, k, cfg_loss.tau)
                  if k in sc else None)
            lt = (temporal_contrast_loss(eo_gl, et_gl, k, cfg_loss.tau)
                  if k in tc else None)
            per_scale[k] = (ls, lt)
        breakdown = hd_nce(per_scale, cfg_loss)
        if breakdown.weight_mass > 0:
            backward(breakdown.total, tape)
    return breakdown


def pretrain(config: RunConfig, videos: Sequence[Video],
             out_dir: Optional[str | Path] = None,
             resume_from: Optional[str | Path] = None) -> PretrainResult:
    """Run the pretraining loop; logs one metrics row per step."""
    config.validate()
    if resume_from is not None:
        params, state = load_checkpoint(resume_from)
    else:
        params = init_params(config.encoder,
                             _rng(config.seed, _STREAM_INIT))
        state = OptimizerState()

    metrics_path = checkpoint_path = None
    writer = csv_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        checkpoint_path = out_dir / "checkpoint.hdck"
        mode = "a" if resume_from is not None and metrics_path.exists() else "w"
        csv_file = open(metrics_path, mode, newline="")
        writer = csv.writer(csv_file)
        if mode == "w":
            writer.writerow(METRIC_COLUMNS)

    rows: list[dict] = []
    try:
        while state.step < config.steps:
            step = state.step
            breakdown = train_step(videos, params, config, step)
            total = breakdown.total_value
            if not np.isfinite(total):
                raise NonFiniteError(f"non-finite loss at step {step}")
            if breakdown.weight_mass > 0:
                grads = {n: p.grad for n, p in params.items()}
                lr_t = sgd_step(params, grads, state, config.lr,
                                config.momentum, config.l2, config.lr_decay)
            else:
                lr_t = config.lr / (1.0 + config.lr_decay * state.step)
                state.step += 1
            row = {"step": step, "lr": lr_t, "L_total": total}
            for k in (3, 4, 5):
                row[f"L_s_{k}"] = breakdown.spatial.get(k, "")
                row[f"L_t_{k}"] = breakdown.temporal.get(k, "")
            rows.append(row)
            if writer is not None:
                writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
                if (config.checkpoint_every
                        and state.step % config.checkpoint_every == 0):
                    csv_file.flush()
                    save_checkpoint(params, state, checkpoint_path)
        if checkpoint_path is not None:
            save_checkpoint(params, state, checkpoint_path)
    finally:
        if csv_file is not None:
            csv_file.close()
    return PretrainResult(params=params, opt_state=state, metrics=rows,
                          metrics_path=metrics_path,
                          checkpoint_path=checkpoint_path)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    return np.format_float_scientific(v, precision=9)


# ----------------------------- checkpoints -----------------------------

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(params: dict[str, Tensor], state: OptimizerState,
                    path: str | Path):
    """Write parameters and optimizer state; bit-exact round trip."""
    entries = [("param/" + n, p.data) for n, p in params.items()]
    entries += [("velocity/" + n, v) for n, v in state.velocities.items()]
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<HQI", CKPT_VERSION, state.step, len(entries)))
        for name, arr in entries:
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor],
                                               OptimizerState]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise TrainerError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    version, step, count = struct.unpack_from("<HQI", blob, 4)
    if version != CKPT_VERSION:
        raise TrainerError(f"{path}: unsupported checkpoint version {version}")
    off = 4 + struct.calcsize("<HQI")
    params: dict[str, Tensor] = {}
    state = OptimizerState(step=step)
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode()
            off += nlen
            code, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if off + nbytes > len(blob):
                raise TrainerError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                                offset=off).reshape(shape).copy()
            off += nbytes
            if name.startswith("param/"):
                pname = name[len("param/"):]
                params[pname] = Tensor(arr, requires_grad=True, name=pname)
            elif name.startswith("velocity/"):
                state.velocities[name[len("velocity/"):]] = arr
            else:
                raise TrainerError(f"{path}: unknown tensor kind {name!r}")
    except struct.error as e:
        raise TrainerError(f"{path}: truncated checkpoint ({e})") from None
    return params, state
