"""Frozen-encoder evaluation: nearest-neighbor retrieval and linear probing.

Retrieval embeds one center-cropped clip per video with the pooled
(pre-projection) feature map of the deepest tap block, ranks a gallery by
cosine similarity (ties broken by ascending video id), and scores a hit
when any of the k nearest gallery entries shares the query's class label.
Videos split deterministically into ~30% queries / ~70% gallery by hashed
id. The linear probe trains a single softmax layer on frozen embeddings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data import Video
from .encoder import EncoderConfig, forward, pool_and_project
from .tensor import (Tape, Tensor, backward, cross_entropy_logits, linear,
                     pool_global)

LABEL_MODES = ("composite", "appearance", "motion")


class EvalError(ValueError):
    pass


@dataclass
class EmbeddingRecord:
    vector: np.ndarray
    video_id: int
    class_label: int


def _label(video: Video, mode: str) -> int:
    if mode == "appearance":
        return video.appearance_label
    if mode == "motion":
        return video.motion_label
    if mode == "composite":
        return video.appearance_label * 65536 + video.motion_label
    raise EvalError(f"unknown label mode {mode!r}")


def _center_clip(video: Video, clip_len: int,
                 crop_hw: tuple[int, int]) -> np.ndarray:
    t, h, w, _ = video.frames.shape
    if t < clip_len:
        raise EvalError(f"video {video.video_id} shorter than clip_len")
    ch, cw = crop_hw
    t0 = (t - clip_len) // 2
    y0 = (h - ch) // 2
    x0 = (w - cw) // 2
    return video.frames[t0:t0 + clip_len, y0:y0 + ch, x0:x0 + cw, :]


def extract_embeddings(params: dict[str, Tensor], config: EncoderConfig,
                       videos: Sequence[Video], clip_len: int,
                       crop_hw: tuple[int, int],
                       label_mode: str = "composite",
                       batch_size: int = 16) -> list[EmbeddingRecord]:
    """One embedding per video: center temporal crop, center spatial crop,
    globally pooled deepest-tap feature map (before any projection head)."""
    top_scale = max(config.tap_blocks)
    records: list[EmbeddingRecord] = []
    for i in range(0, len(videos), batch_size):
        chunk = videos[i:i + batch_size]
        clips = np.stack([_center_clip(v, clip_len, crop_hw) for v in chunk])
        pyramid = forward(Tensor(clips.astype(np.float32)), params, config)
        pooled = pool_global(pyramid[top_scale]).data
        for row, v in zip(pooled, chunk):
            vec = row.astype(np.float64)
            if np.linalg.norm(vec) == 0.0:
                raise EvalError(f"zero-norm embedding for video {v.video_id}")
            records.append(EmbeddingRecord(vector=vec, video_id=v.video_id,
                                           class_label=_label(v, label_mode)))
    return records


def relabel(records: Sequence[EmbeddingRecord], videos: Sequence[Video],
            label_mode: str) -> list[EmbeddingRecord]:
    """Same embeddings under a different label axis."""
    by_id = {v.video_id: v for v in videos}
    return [replace(r, class_label=_label(by_id[r.video_id], label_mode))
            for r in records]


def split_query_gallery(records: Sequence[EmbeddingRecord],
                        query_percent: int = 30
                        ) -> tuple[list[EmbeddingRecord], list[EmbeddingRecord]]:
    """Deterministic split by hashed video id: ~query_percent% queries."""
    queries, gallery = [], []
    for r in records:
        h = hashlib.sha256(str(r.video_id).encode()).digest()
        (queries if h[0] % 100 < query_percent else gallery).append(r)
    if not queries or not gallery:
        raise EvalError("degenerate query/gallery split")
    return queries, gallery


def nn_retrieval(queries: Sequence[EmbeddingRecord],
                 gallery: Sequence[EmbeddingRecord],
                 ks: Sequence[int]) -> dict[int, float]:
    """Top-k accuracy of cosine-ranked retrieval for each k."""
    if not gallery:
        raise EvalError("empty gallery")
    qids = {r.video_id for r in queries}
    gids = [r.video_id for r in gallery]
    if qids & set(gids):
        raise EvalError(f"query/gallery video ids overlap: {qids & set(gids)}")
    qm = np.stack([r.vector for r in queries])
    gm = np.stack([r.vector for r in gallery])
    qn = np.linalg.norm(qm, axis=1)
    gn = np.linalg.norm(gm, axis=1)
    if np.any(qn == 0) or np.any(gn == 0):
        raise EvalError("zero-norm embedding")
    sims = (qm / qn[:, None]) @ (gm / gn[:, None]).T
    gid_arr = np.asarray(gids)
    glab = np.asarray([r.class_label for r in gallery])
    qlab = np.asarray([r.class_label for r in queries])
    ks = sorted(ks)
    hits = {k: 0 for k in ks}
    for qi in range(len(queries)):
        order = np.lexsort((gid_arr, -sims[qi]))
        match = glab[order] == qlab[qi]
        for k in ks:
            if match[:k].any():
                hits[k] += 1
    return {k: hits[k] / len(queries) for k in ks}


def linear_probe(train_records: Sequence[EmbeddingRecord],
                 test_records: Sequence[EmbeddingRecord],
                 epochs: int = 200, lr: float = 0.5) -> float:
    """Train one linear layer + softmax on frozen embeddings (full-batch
    gradient descent from zero init); return test argmax accuracy."""
    classes = sorted({r.class_label for r in train_records})
    missing = {r.class_label for r in test_records} - set(classes)
    if missing:
        raise EvalError(f"classes {missing} absent from training split")
    cls_index = {c: i for i, c in enumerate(classes)}
    xtr = np.stack([r.vector for r in train_records]).astype(np.float64)
    ytr = np.asarray([cls_index[r.class_label] for r in train_records])
    xte = np.stack([r.vector for r in test_records]).astype(np.float64)
    yte = np.asarray([cls_index[r.class_label] for r in test_records])
    # standardize with train statistics only
    mu = xtr.mean(axis=0)
    sd = xtr.std(axis=0)
    sd[sd == 0] = 1.0
    xtr = (xtr - mu) / sd
    xte = (xte - mu) / sd

    w = Tensor(np.zeros((xtr.shape[1], len(classes))), requires_grad=True)
    b = Tensor(np.zeros(len(classes)), requires_grad=True)
    xt = Tensor(xtr)
    for _ in range(epochs):
        w.zero_grad()
        b.zero_grad()
        with Tape() as tape:
            ce = cross_entropy_logits(linear(xt, w, b), ytr, reduction="mean")
        backward(ce, tape)
        w.data = w.data - lr * w.grad
        b.data = b.data - lr * b.grad
    pred = (xte @ w.data + b.data).argmax(axis=1)
    return float((pred == yte).mean())
