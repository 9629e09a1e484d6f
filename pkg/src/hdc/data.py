"""Synthetic moving-shapes video corpus with separable appearance and
motion semantics, plus its binary storage format.

Each video shows one shape in one color translating at constant velocity
with toroidal wraparound, under additive Gaussian pixel noise. Appearance
(shape x color) and motion (direction x speed) labels are drawn
independently, so neither is predictable from the other by construction.

Storage format: magic ``HDCV``, u16 version, u32 video count; per video a
header (u32 id; u16 T,H,W,C; u16 appearance label; u16 motion label)
followed by the raw little-endian float32 frames. Round-trips are
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"HDCV"
VERSION = 1

_HEADER = struct.Struct("<4sHI")
_VIDEO_HEADER = struct.Struct("<IHHHHHH")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    num_videos: int = 64
    frames_per_video: int = 64
    frame_size: tuple[int, int] = (32, 32)
    num_shapes: int = 3
    num_colors: int = 2
    directions: tuple[tuple[int, int], ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))
    speeds: tuple[int, ...] = (1, 3)
    shape_size: int = 12
    noise_std: float = 0.05

    def __post_init__(self):
        if self.num_shapes * self.num_colors < 2:
            raise DatasetError("need at least 2 appearance classes")
        if len(self.directions) * len(self.speeds) < 2:
            raise DatasetError("need at least 2 motion classes")
        if self.shape_size > min(self.frame_size):
            raise DatasetError(
                f"shape_size {self.shape_size} larger than frame "
                f"{self.frame_size}")

    @property
    def num_appearance_classes(self) -> int:
        return self.num_shapes * self.num_colors

    @property
    def num_motion_classes(self) -> int:
        return len(self.directions) * len(self.speeds)

    def velocity(self, motion_label: int) -> tuple[int, int]:
        d = self.directions[motion_label // len(self.speeds)]
        s = self.speeds[motion_label % len(self.speeds)]
        return d[0] * s, d[1] * s


@dataclass
class Video:
    frames: np.ndarray  # [T,H,W,3] float32 in [-1,1]
    video_id: int
    appearance_label: int
    motion_label: int


# distinct color vectors in (-1, 1); none of the components touch the -1
# background so rendered pixels are always separable from it
_COLORS = np.array([
    [0.9, -0.5, -0.5],
    [-0.5, -0.5, 0.9],
    [-0.5, 0.9, -0.5],
    [0.9, 0.9, -0.5],
], dtype=np.float32)


def _shape_mask(shape_idx: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    kind = shape_idx % 3
    if kind == 0:  # filled square
        return np.ones((size, size), dtype=bool)
    if kind == 1:  # disk
        return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0 - 0.5) ** 2
    # plus / cross
    arm = max(size // 6, 1)
    return (np.abs(yy - c) <= arm) | (np.abs(xx - c) <= arm)


def render_video(config: SyntheticConfig, video_id: int,
                 appearance_label: int, motion_label: int,
                 start: tuple[int, int],
                 rng: Optional[np.random.Generator]) -> Video:
    """Render one video; ``rng`` supplies pixel noise (None = noiseless)."""
    h, w = config.frame_size
    t_total = config.frames_per_video
    shape_idx = appearance_label // config.num_colors
    color = _COLORS[appearance_label % config.num_colors]
    mask = _shape_mask(shape_idx, config.shape_size)
    vy, vx = config.velocity(motion_label)
    frames = np.full((t_total, h, w, 3), -1.0, dtype=np.float32)
    size = config.shape_size
    for t in range(t_total):
        rows = (start[0] + t * vy + np.arange(size)) % h
        cols = (start[1] + t * vx + np.arange(size)) % w
        patch = frames[t][np.ix_(rows, cols)]
        patch[mask] = color
        frames[t][np.ix_(rows, cols)] = patch
    if rng is not None and config.noise_std > 0:
        frames += rng.normal(0.0, config.noise_std, frames.shape
                             ).astype(np.float32)
        np.clip(frames, -1.0, 1.0, out=frames)
    return Video(frames=frames, video_id=video_id,
                 appearance_label=appearance_label, motion_label=motion_label)


def generate_synthetic(config: SyntheticConfig, seed,
                       path: Optional[str | Path] = None) -> list[Video]:
    """Generate the corpus deterministically; optionally write it to disk.

    ``seed`` may be an int or a tuple of ints (a derived seed stream)."""
    entropy = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    videos = []
    for vid in range(config.num_videos):
        rng = np.random.default_rng(np.random.SeedSequence(entropy + (vid,)))
        appearance = int(rng.integers(config.num_appearance_classes))
        motion = int(rng.integers(config.num_motion_classes))
        start = (int(rng.integers(config.frame_size[0])),
                 int(rng.integers(config.frame_size[1])))
        noise_rng = rng if config.noise_std > 0 else None
        videos.append(render_video(config, vid, appearance, motion, start,
                                   noise_rng))
    if path is not None:
        save_dataset(videos, path)
    return videos


def save_dataset(videos: Sequence[Video], path: str | Path):
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(videos)))
        for v in videos:
            t, h, w, c = v.frames.shape
            f.write(_VIDEO_HEADER.pack(v.video_id, t, h, w, c,
                                       v.appearance_label, v.motion_label))
            f.write(np.ascontiguousarray(v.frames, dtype="<f4").tobytes())


def load_dataset(path: str | Path) -> list[Video]:
    """Load a corpus; bit-exact inverse of :func:`save_dataset`."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    videos = []
    for _ in range(count):
        if off + _VIDEO_HEADER.size > len(blob):
            raise DatasetError(f"{path}: truncated video header")
        vid, t, h, w, c, app, mot = _VIDEO_HEADER.unpack_from(blob, off)
        off += _VIDEO_HEADER.size
        nbytes = t * h * w * c * 4
        if off + nbytes > len(blob):
            raise DatasetError(f"{path}: truncated frame payload")
        frames = np.frombuffer(blob, dtype="<f4", count=t * h * w * c,
                               offset=off).reshape(t, h, w, c).copy()
        off += nbytes
        videos.append(Video(frames=frames, video_id=vid,
                            appearance_label=app, motion_label=mot))
    if off != len(blob):
        raise DatasetError(f"{path}: {len(blob) - off} trailing bytes")
    return videos


def sample_batch(videos: Sequence[Video], batch: int, clip_len: int,
                 rng: np.random.Generator) -> list[Video]:
    """Sample ``batch`` distinct videos uniformly without replacement."""
    if batch > len(videos):
        raise DatasetError(
            f"batch {batch} exceeds corpus size {len(videos)}")
    idx = rng.choice(len(videos), size=batch, replace=False)
    picked = [videos[i] for i in idx]
    for v in picked:
        if v.frames.shape[0] < clip_len:
            raise DatasetError(
                f"video {v.video_id} has {v.frames.shape[0]} frames, "
                f"fewer than clip_len {clip_len}")
    return picked
