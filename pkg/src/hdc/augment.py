"""Seeded spatial/temporal augmentation of video clips.

Three independently configured families of spatial transforms produce the
clip variants used by the two contrastive subtasks: two spatially-augmented
views of the same frames, and one view of an independently re-cropped
window of the source video (whose spatial augmentation is mandatory, so the
matching task cannot fall back on identical spatial context).

Descriptors are sampled once per clip and applied identically to every
frame; all pixel values stay in [-1, 1]. An identity descriptor reproduces
the input bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialTransformDescriptor:
    crop: tuple[int, int, int, int]          # top, left, height, width (scaled frame)
    scale: float                             # resize factor applied before crop
    flip: bool
    color: tuple[float, float, float]        # brightness, contrast, saturation
    channel_replication: Optional[int]       # source channel copied to all, or None

    def is_identity_color(self) -> bool:
        return self.color == (1.0, 1.0, 1.0) and self.channel_replication is None


@dataclass(frozen=True)
class AugmentationFamily:
    crop_output: tuple[int, int] = (28, 28)
    scale_range: tuple[float, float] = (1.0, 1.15)
    flip_prob: float = 0.5
    # one (lo, hi) multiplicative range per factor: brightness, contrast, saturation
    color_jitter_range: tuple[tuple[float, float], ...] = (
        (0.6, 1.4), (0.6, 1.4), (0.6, 1.4))
    channel_replication_prob: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise AugmentationError(f"flip_prob {self.flip_prob} outside [0,1]")
        if not 0.0 <= self.channel_replication_prob <= 1.0:
            raise AugmentationError(
                f"channel_replication_prob {self.channel_replication_prob} "
                "outside [0,1]")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise AugmentationError(f"bad scale_range {self.scale_range}")
        if len(self.color_jitter_range) != 3:
            raise AugmentationError("color_jitter_range needs 3 (lo,hi) pairs")
        for r in self.color_jitter_range:
            if not (0.0 < r[0] <= r[1]):
                raise AugmentationError(f"bad color jitter range {r}")
        if min(self.crop_output) < 1:
            raise AugmentationError(f"bad crop_output {self.crop_output}")


@dataclass
class AugmentedTriplet:
    u_o: np.ndarray
    u_s: np.ndarray
    u_t: np.ndarray
    o_start: int
    t_start: int


def identity_family(crop_hw: tuple[int, int]) -> AugmentationFamily:
    """A family whose every sample is the identity descriptor."""
    return AugmentationFamily(
        crop_output=crop_hw, scale_range=(1.0, 1.0), flip_prob=0.0,
        color_jitter_range=((1.0, 1.0),) * 3, channel_replication_prob=0.0)


def sample_spatial_transform(family: AugmentationFamily,
                             rng: np.random.Generator,
                             frame_size: tuple[int, int] = (32, 32),
                             num_channels: int = 3) -> SpatialTransformDescriptor:
    """Draw one descriptor; identical seeds yield identical descriptors."""
    h, w = frame_size
    ch, cw = family.crop_output
    scale = float(rng.uniform(*family.scale_range))
    sh, sw = round(h * scale), round(w * scale)
    if ch > sh or cw > sw:
        raise AugmentationError(
            f"crop {family.crop_output} larger than scaled frame {(sh, sw)}")
    top = int(rng.integers(0, sh - ch + 1))
    left = int(rng.integers(0, sw - cw + 1))
    flip = bool(rng.random() < family.flip_prob)
    color = tuple(float(rng.uniform(*r)) for r in family.color_jitter_range)
    repl_draw = rng.random()
    repl_chan = int(rng.integers(0, num_channels))
    replication = repl_chan if repl_draw < family.channel_replication_prob else None
    return SpatialTransformDescriptor(
        crop=(top, left, ch, cw), scale=scale, flip=flip, color=color,
        channel_replication=replication)


def _resize_crop(clip: np.ndarray, d: SpatialTransformDescriptor) -> np.ndarray:
    """Bilinear resize by d.scale fused with the crop (only crop pixels are
    computed). scale == 1.0 reduces to a plain slice, bit-exact."""
    t, h, w, c = clip.shape
    top, left, ch, cw = d.crop
    if d.scale == 1.0:
        if top + ch > h or left + cw > w:
            raise AugmentationError(f"crop {d.crop} outside frame {(h, w)}")
        return clip[:, top:top + ch, left:left + cw, :]
    sh, sw = round(h * d.scale), round(w * d.scale)
    if top + ch > sh or left + cw > sw:
        raise AugmentationError(f"crop {d.crop} outside scaled frame {(sh, sw)}")
    ys = (top + np.arange(ch) + 0.5) * (h / sh) - 0.5
    xs = (left + np.arange(cw) + 0.5) * (w / sw) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(clip.dtype)[None, :, None, None]
    fx = (xs - x0).astype(clip.dtype)[None, None, :, None]
    flat = clip.reshape(t, h * w, c)
    rows0 = (y0 * w)[:, None]
    rows1 = (y1 * w)[:, None]
    idx = np.concatenate([(rows0 + x0).ravel(), (rows0 + x1).ravel(),
                          (rows1 + x0).ravel(), (rows1 + x1).ravel()])
    corners = flat[:, idx].reshape(t, 4, ch, cw, c)
    top_row = corners[:, 0] + fx * (corners[:, 1] - corners[:, 0])
    bot_row = corners[:, 2] + fx * (corners[:, 3] - corners[:, 2])
    return top_row + fy * (bot_row - top_row)


def apply_spatial(clip: np.ndarray, d: SpatialTransformDescriptor) -> np.ndarray:
    """Apply scale, crop, flip, color jitter, channel replication to every
    frame of a [T,H,W,C] clip in [-1,1]. Output stays in [-1,1]."""
    out = _resize_crop(clip, d)
    if d.flip:
        out = out[:, :, ::-1, :]
    bright, contrast, sat = d.color
    jittered = False
    if bright != 1.0:
        out = out * np.asarray(bright, dtype=out.dtype)
        jittered = True
    if contrast != 1.0:
        m = out.mean(dtype=np.float64).astype(out.dtype)
        out = m + (out - m) * np.asarray(contrast, dtype=out.dtype)
        jittered = True
    if sat != 1.0:
        gray = out.mean(axis=-1, keepdims=True)
        out = gray + (out - gray) * np.asarray(sat, dtype=out.dtype)
        jittered = True
    if d.channel_replication is not None:
        out = np.repeat(out[..., d.channel_replication:d.channel_replication + 1],
                        clip.shape[-1], axis=-1)
    if jittered:
        out = np.clip(out, -1.0, 1.0)
    return out


def temporal_crop(frames: np.ndarray, clip_len: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Uniform contiguous window of clip_len frames."""
    total = frames.shape[0]
    if total < clip_len:
        raise AugmentationError(
            f"video has {total} frames, fewer than clip_len {clip_len}")
    start = int(rng.integers(0, total - clip_len + 1))
    return frames[start:start + clip_len], start


def make_triplet(frames: np.ndarray, clip_len: int,
                 families: tuple[AugmentationFamily, AugmentationFamily,
                                 AugmentationFamily],
                 rng: np.random.Generator) -> AugmentedTriplet:
    """Build (u_o, u_s, u_t) for one source video.

    u_o and u_s are two spatial augmentations of the same temporal window;
    u_t is a spatial augmentation of an independently drawn window.
    """
    fam_o, fam_s, fam_t = families
    if not (fam_o.crop_output == fam_s.crop_output == fam_t.crop_output):
        raise AugmentationError("families must share crop_output so the "
                                "triplet clips have identical shape")
    frame_size = frames.shape[1:3]
    nc = frames.shape[3]
    x, o_start = temporal_crop(frames, clip_len, rng)
    u_o = apply_spatial(x, sample_spatial_transform(fam_o, rng, frame_size, nc))
    u_s = apply_spatial(x, sample_spatial_transform(fam_s, rng, frame_size, nc))
    x2, t_start = temporal_crop(frames, clip_len, rng)
    u_t = apply_spatial(x2, sample_spatial_transform(fam_t, rng, frame_size, nc))
    return AugmentedTriplet(u_o=u_o, u_s=u_s, u_t=u_t,
                            o_start=o_start, t_start=t_start)
