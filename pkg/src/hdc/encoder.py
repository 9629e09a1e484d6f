"""Small 3D CNN encoder with multi-scale feature taps and per-scale,
per-role linear projection heads.

Each block is conv3d -> instance norm -> relu; instance normalization keeps
all statistics per (instance, channel), so no information leaks across the
batch. Feature maps of the tapped blocks form the pyramid used by the
multi-scale losses. Pooled vectors are projected by a head specific to the
(scale, variant-role) pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .tensor import Tensor, conv3d, instance_norm, linear, pool, relu

ROLES = ("o", "s", "t")


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)


@dataclass(frozen=True)
class EncoderConfig:
    blocks: tuple[BlockSpec, ...]
    tap_blocks: tuple[int, ...] = (3, 4, 5)   # 1-based block indices
    projection_dim: int = 32
    in_channels: int = 3

    def __post_init__(self):
        if self.projection_dim < 1:
            raise EncoderError("projection_dim must be >= 1")
        for i in self.tap_blocks:
            if not 1 <= i <= len(self.blocks):
                raise EncoderError(
                    f"tap block {i} outside 1..{len(self.blocks)}")
        for b in self.blocks:
            if any(s < 1 for s in b.stride):
                raise EncoderError(f"stride {b.stride} must be >= 1")

    def tap_channels(self, k: int) -> int:
        return self.blocks[k - 1].channels


def default_toy_config(projection_dim: int = 32) -> EncoderConfig:
    """5 blocks, channels 8..128, taps at the last three blocks."""
    return EncoderConfig(
        blocks=(
            BlockSpec(8, stride=(1, 1, 1)),
            BlockSpec(16, stride=(2, 2, 2)),
            BlockSpec(32, stride=(2, 2, 2)),
            BlockSpec(64, stride=(2, 2, 2)),
            BlockSpec(128, stride=(1, 2, 2)),
        ),
        tap_blocks=(3, 4, 5),
        projection_dim=projection_dim,
    )


FeaturePyramid = dict  # scale k -> Tensor[B, T_k, H_k, W_k, C_k]


def init_params(config: EncoderConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, Tensor]:
    """Fan-in-scaled uniform init for conv kernels and head weights;
    instance-norm gamma=1, beta=0; biases 0. Deterministic per rng state."""
    params: dict[str, Tensor] = {}

    def add(name, data):
        params[name] = Tensor(np.asarray(data, dtype=dtype),
                              requires_grad=True, name=name)

    cin = config.in_channels
    for i, blk in enumerate(config.blocks, start=1):
        kt, kh, kw = blk.kernel
        fan_in = kt * kh * kw * cin
        bound = np.sqrt(6.0 / fan_in)
        add(f"block{i}.kernel",
            rng.uniform(-bound, bound, (kt, kh, kw, cin, blk.channels)))
        add(f"block{i}.bias", np.zeros(blk.channels))
        add(f"block{i}.gamma", np.ones(blk.channels))
        add(f"block{i}.beta", np.zeros(blk.channels))
        cin = blk.channels
    for k in config.tap_blocks:
        ck = config.tap_channels(k)
        bound = np.sqrt(6.0 / ck)
        for role in ROLES:
            add(f"head{k}.{role}.weight",
                rng.uniform(-bound, bound, (ck, config.projection_dim)))
            add(f"head{k}.{role}.bias", np.zeros(config.projection_dim))
    return params


def forward(batch: Tensor, params: dict[str, Tensor],
            config: EncoderConfig) -> FeaturePyramid:
    """Run the block stack; returns post-activation maps of the tap blocks."""
    if np.abs(batch.data).max() > 1.0 + 1e-6:
        raise EncoderError("encoder input must be scaled to [-1, 1]")
    x = batch
    pyramid: FeaturePyramid = {}
    for i, blk in enumerate(config.blocks, start=1):
        x = conv3d(x, params[f"block{i}.kernel"], params[f"block{i}.bias"],
                   stride=blk.stride, padding="same")
        x = instance_norm(x, params[f"block{i}.gamma"],
                          params[f"block{i}.beta"])
        x = relu(x)
        if i in config.tap_blocks:
            pyramid[i] = x
    return pyramid


@dataclass
class EmbeddingSet:
    """Projected embeddings of one variant role at one pooling mode.

    ``per_scale[k]`` is a list of N_k tensors [B, projection_dim] in
    spatial mode (N_k = temporal extent of the scale-k map), or a single
    tensor [B, projection_dim] in global mode.
    """
    role: str
    mode: str
    per_scale: dict[int, Union[list, Tensor]]

    def num_slots(self, k: int) -> int:
        v = self.per_scale[k]
        return len(v) if isinstance(v, list) else 1


def pool_and_project(pyramid: FeaturePyramid, role: str, mode: str,
                     params: dict[str, Tensor],
                     config: EncoderConfig) -> EmbeddingSet:
    """Pool each scale per ``mode`` and apply that (scale, role) head."""
    if role not in ROLES:
        raise EncoderError(f"unknown role {role!r}")
    if mode not in ("spatial", "global"):
        raise EncoderError(f"unknown mode {mode!r}")
    out: dict[int, Union[list, Tensor]] = {}
    for k, fmap in pyramid.items():
        wname, bname = f"head{k}.{role}.weight", f"head{k}.{role}.bias"
        if wname not in params:
            raise EncoderError(f"no projection head for scale {k} role {role}")
        w, b = params[wname], params[bname]
        if mode == "spatial":
            out[k] = [linear(v, w, b) for v in pool(fmap, "spatial")]
        else:
            out[k] = linear(pool(fmap, "global"), w, b)
    return EmbeddingSet(role=role, mode=mode, per_scale=out)
