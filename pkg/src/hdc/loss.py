"""Contrastive objectives: InfoNCE, the spatial and temporal subtask
losses, and their weighted multi-scale compound.

InfoNCE here is the softmax cross-entropy of a cosine-similarity matrix
against the identity pairing: row i's positive is column i, the other B-1
in-batch entries are the negatives. Values are sums over the batch, exactly
as optimized. The temporal subtask applies the same loss to globally pooled
embeddings; the spatial subtask averages it over the temporal slots of
spatially pooled embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .encoder import EmbeddingSet
from .tensor import (Tensor, TensorError, add, cosine_similarity_matrix,
                     cross_entropy_logits, scale)


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    alphas: dict = field(default_factory=lambda: {3: 0.25, 4: 0.5, 5: 1.0})
    betas: dict = field(default_factory=lambda: {3: 0.25, 4: 0.5, 5: 1.0})
    spatial_scales: tuple[int, ...] = (3, 4, 5)
    temporal_scales: tuple[int, ...] = (3, 4, 5)

    def __post_init__(self):
        if self.tau <= 0:
            raise LossError(f"tau must be > 0, got {self.tau}")
        for named, weights in (("alpha", self.alphas), ("beta", self.betas)):
            for k, v in weights.items():
                if v < 0:
                    raise LossError(f"{named}[{k}] = {v} is negative")


@dataclass
class LossBreakdown:
    """Per-scale subtask losses and their weighted total."""
    spatial: dict  # scale -> float (unweighted)
    temporal: dict
    total: Tensor
    weight_mass: float  # sum of |weights| actually applied

    @property
    def total_value(self) -> float:
        return self.total.item()


def info_nce(anchors: Tensor, positives: Tensor, tau: float) -> Tensor:
    """-sum_i log( exp(sim(a_i,p_i)/tau) / sum_j exp(sim(a_i,p_j)/tau) )."""
    b = anchors.shape[0]
    if b < 2:
        raise LossError(f"InfoNCE needs a batch of >= 2 (no negatives at B={b})")
    if positives.shape[0] != b:
        raise LossError(
            f"anchor/positive batch mismatch: {b} vs {positives.shape[0]}")
    sim = cosine_similarity_matrix(anchors, positives)
    return cross_entropy_logits(scale(sim, 1.0 / tau), np.arange(b),
                                reduction="sum")


def spatial_contrast_loss(embeds_o: EmbeddingSet, embeds_s: EmbeddingSet,
                          k: int, tau: float) -> Tensor:
    """Mean InfoNCE over the N_k temporal slots at scale k."""
    if embeds_o.mode != "spatial" or embeds_s.mode != "spatial":
        raise LossError("spatial contrast needs spatial-mode embeddings")
    slots_o, slots_s = embeds_o.per_scale[k], embeds_s.per_scale[k]
    if len(slots_o) != len(slots_s):
        raise LossError(
            f"slot count mismatch at scale {k}: "
            f"{len(slots_o)} vs {len(slots_s)}")
    total = None
    for vo, vs in zip(slots_o, slots_s):
        term = info_nce(vo, vs, tau)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / len(slots_o))


def temporal_contrast_loss(embeds_o: EmbeddingSet, embeds_t: EmbeddingSet,
                           k: int, tau: float) -> Tensor:
    """InfoNCE between globally pooled embeddings at scale k."""
    if embeds_o.mode != "global" or embeds_t.mode != "global":
        raise LossError("temporal contrast needs global-mode embeddings")
    return info_nce(embeds_o.per_scale[k], embeds_t.per_scale[k], tau)


def hd_nce(per_scale: dict[int, tuple[Optional[Tensor], Optional[Tensor]]],
           config: LossConfig) -> LossBreakdown:
    """Weighted compound: sum_k (alpha_k * L_s^k + beta_k * L_t^k).

    ``per_scale`` maps scale -> (spatial loss or None, temporal loss or
    None); disabled subtasks are absent from the breakdown and contribute
    nothing.
    """
    total: Optional[Tensor] = None
    spatial, temporal = {}, {}
    mass = 0.0
    for k in sorted(per_scale):
        ls, lt = per_scale[k]
        if ls is not None:
            if k not in config.alphas:
                raise LossError(f"no alpha weight for scale {k}")
            spatial[k] = ls.item()
            term = scale(ls, config.alphas[k])
            total = term if total is None else add(total, term)
            mass += abs(config.alphas[k])
        if lt is not None:
            if k not in config.betas:
                raise LossError(f"no beta weight for scale {k}")
            temporal[k] = lt.item()
            term = scale(lt, config.betas[k])
            total = term if total is None else add(total, term)
            mass += abs(config.betas[k])
    if total is None:
        total = Tensor(0.0)
    return LossBreakdown(spatial=spatial, temporal=temporal, total=total,
                         weight_mass=mass)
