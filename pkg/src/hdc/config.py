"""JSON run configuration: parsing with defaults, override merging, and
the resolved-config dump that makes every run reproducible."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .augment import AugmentationFamily
from .data import SyntheticConfig
from .encoder import BlockSpec, EncoderConfig, default_toy_config
from .loss import LossConfig
from .trainer import RunConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalOptions:
    query_percent: int = 30
    ks: tuple[int, ...] = (1, 5, 10, 20)
    label_mode: str = "composite"


def _family_to_dict(f: AugmentationFamily) -> dict:
    return {
        "crop_output": list(f.crop_output),
        "scale_range": list(f.scale_range),
        "flip_prob": f.flip_prob,
        "color_jitter_range": [list(r) for r in f.color_jitter_range],
        "channel_replication_prob": f.channel_replication_prob,
    }


def _family_from_dict(d: dict) -> AugmentationFamily:
    base = AugmentationFamily()
    return AugmentationFamily(
        crop_output=tuple(d.get("crop_output", base.crop_output)),
        scale_range=tuple(d.get("scale_range", base.scale_range)),
        flip_prob=d.get("flip_prob", base.flip_prob),
        color_jitter_range=tuple(
            tuple(r) for r in d.get("color_jitter_range",
                                    base.color_jitter_range)),
        channel_replication_prob=d.get("channel_replication_prob",
                                       base.channel_replication_prob),
    )


def config_to_dict(cfg: RunConfig, ev: Optional[EvalOptions] = None) -> dict:
    ds = cfg.dataset
    enc = cfg.encoder
    loss = cfg.loss
    out = {
        "schema_version": SCHEMA_VERSION,
        "dataset": {
            "num_videos": ds.num_videos,
            "frames_per_video": ds.frames_per_video,
            "frame_size": list(ds.frame_size),
            "num_shapes": ds.num_shapes,
            "num_colors": ds.num_colors,
            "directions": [list(d) for d in ds.directions],
            "speeds": list(ds.speeds),
            "shape_size": ds.shape_size,
            "noise_std": ds.noise_std,
        },
        "encoder": {
            "blocks": [{"channels": b.channels, "kernel": list(b.kernel),
                        "stride": list(b.stride)} for b in enc.blocks],
            "tap_blocks": list(enc.tap_blocks),
            "projection_dim": enc.projection_dim,
            "in_channels": enc.in_channels,
        },
        "loss": {
            "tau": loss.tau,
            "alphas": {str(k): v for k, v in loss.alphas.items()},
            "betas": {str(k): v for k, v in loss.betas.items()},
            "spatial_scales": list(loss.spatial_scales),
            "temporal_scales": list(loss.temporal_scales),
        },
        "augmentation": {
            "o": _family_to_dict(cfg.family_o),
            "s": _family_to_dict(cfg.family_s),
            "t": _family_to_dict(cfg.family_t),
        },
        "trainer": {
            "batch_size": cfg.batch_size,
            "clip_len": cfg.clip_len,
            "steps": cfg.steps,
            "lr": cfg.lr,
            "momentum": cfg.momentum,
            "lr_decay": cfg.lr_decay,
            "l2": cfg.l2,
            "seed": cfg.seed,
            "checkpoint_every": cfg.checkpoint_every,
        },
    }
    if ev is not None:
        out["evaluator"] = {
            "query_percent": ev.query_percent,
            "ks": list(ev.ks),
            "label_mode": ev.label_mode,
        }
    return out


def config_from_dict(d: dict) -> tuple[RunConfig, EvalOptions]:
    try:
        ds_d = d.get("dataset", {})
        base_ds = SyntheticConfig()
        dataset = SyntheticConfig(
            num_videos=ds_d.get("num_videos", base_ds.num_videos),
            frames_per_video=ds_d.get("frames_per_video",
                                      base_ds.frames_per_video),
            frame_size=tuple(ds_d.get("frame_size", base_ds.frame_size)),
            num_shapes=ds_d.get("num_shapes", base_ds.num_shapes),
            num_colors=ds_d.get("num_colors", base_ds.num_colors),
            directions=tuple(tuple(x) for x in
                             ds_d.get("directions", base_ds.directions)),
            speeds=tuple(ds_d.get("speeds", base_ds.speeds)),
            shape_size=ds_d.get("shape_size", base_ds.shape_size),
            noise_std=ds_d.get("noise_std", base_ds.noise_std),
        )
        enc_d = d.get("encoder", {})
        if "blocks" in enc_d:
            blocks = tuple(BlockSpec(channels=b["channels"],
                                     kernel=tuple(b.get("kernel", (3, 3, 3))),
                                     stride=tuple(b.get("stride", (1, 1, 1))))
                           for b in enc_d["blocks"])
        else:
            blocks = default_toy_config().blocks
        encoder = EncoderConfig(
            blocks=blocks,
            tap_blocks=tuple(enc_d.get("tap_blocks", (3, 4, 5))),
            projection_dim=enc_d.get("projection_dim", 32),
            in_channels=enc_d.get("in_channels", 3),
        )
        loss_d = d.get("loss", {})
        base_loss = LossConfig()
        loss = LossConfig(
            tau=loss_d.get("tau", base_loss.tau),
            alphas={int(k): v for k, v in
                    loss_d.get("alphas", base_loss.alphas).items()},
            betas={int(k): v for k, v in
                   loss_d.get("betas", base_loss.betas).items()},
            spatial_scales=tuple(loss_d.get("spatial_scales",
                                            base_loss.spatial_scales)),
            temporal_scales=tuple(loss_d.get("temporal_scales",
                                             base_loss.temporal_scales)),
        )
        aug_d = d.get("augmentation", {})
        fams = {r: _family_from_dict(aug_d.get(r, {})) for r in "ost"}
        tr = d.get("trainer", {})
        base_tr = RunConfig()
        cfg = RunConfig(
            dataset=dataset, encoder=encoder, loss=loss,
            family_o=fams["o"], family_s=fams["s"], family_t=fams["t"],
            batch_size=tr.get("batch_size", base_tr.batch_size),
            clip_len=tr.get("clip_len", base_tr.clip_len),
            steps=tr.get("steps", base_tr.steps),
            lr=tr.get("lr", base_tr.lr),
            momentum=tr.get("momentum", base_tr.momentum),
            lr_decay=tr.get("lr_decay", base_tr.lr_decay),
            l2=tr.get("l2", base_tr.l2),
            seed=tr.get("seed", base_tr.seed),
            checkpoint_every=tr.get("checkpoint_every",
                                    base_tr.checkpoint_every),
        )
        ev_d = d.get("evaluator", {})
        base_ev = EvalOptions()
        ev = EvalOptions(
            query_percent=ev_d.get("query_percent", base_ev.query_percent),
            ks=tuple(ev_d.get("ks", base_ev.ks)),
            label_mode=ev_d.get("label_mode", base_ev.label_mode),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed config: {e}") from None
    return cfg, ev


def load_config(path: str | Path) -> tuple[RunConfig, EvalOptions]:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}")
    return config_from_dict(d)


def apply_overrides(cfg: RunConfig, seed: Optional[int] = None,
                    steps: Optional[int] = None, batch: Optional[int] = None,
                    tau: Optional[float] = None,
                    weights: Optional[dict[int, float]] = None) -> RunConfig:
    """CLI override merging; ``weights`` sets alpha and beta per scale."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if steps is not None:
        cfg = replace(cfg, steps=steps)
    if batch is not None:
        cfg = replace(cfg, batch_size=batch)
    if tau is not None or weights is not None:
        loss = cfg.loss
        cfg = replace(cfg, loss=LossConfig(
            tau=tau if tau is not None else loss.tau,
            alphas=dict(weights) if weights is not None else loss.alphas,
            betas=dict(weights) if weights is not None else loss.betas,
            spatial_scales=(tuple(sorted(weights)) if weights is not None
                            else loss.spatial_scales),
            temporal_scales=(tuple(sorted(weights)) if weights is not None
                             else loss.temporal_scales),
        ))
    return cfg


def write_resolved(cfg: RunConfig, ev: EvalOptions, out_dir: str | Path):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps(config_to_dict(cfg, ev), indent=2, sort_keys=True) + "\n")
