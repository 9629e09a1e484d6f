"""Built-in verification: finite-difference gradient checks for every
differentiable operation (and the full compound-loss graph), plus the
independent loss oracle used to cross-check the InfoNCE implementation.

The oracle deliberately avoids the tensor engine: similarities, softmax
rows, and the log-diagonal sum are computed with plain numpy loops, so it
can disagree with the production path if either is wrong.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .augment import AugmentationFamily, make_triplet
from .data import SyntheticConfig, generate_synthetic
from .encoder import BlockSpec, EncoderConfig, forward, init_params, \
    pool_and_project
from .loss import LossConfig, hd_nce, info_nce, spatial_contrast_loss, \
    temporal_contrast_loss
from .tensor import (Tape, Tensor, backward, conv3d, cosine_similarity_matrix,
                     cross_entropy_logits, gradient_check, instance_norm,
                     linear, mul, pool_global, pool_spatial, relu, scale,
                     tensor_sum)
from .tensor.gradcheck import GradCheckReport


def oracle_info_nce(anchors: np.ndarray, positives: np.ndarray,
                    tau: float) -> float:
    """Explicit similarity-matrix construction + cross-entropy against the
    identity pairing, all in plain loops."""
    b = anchors.shape[0]
    s = np.empty((b, b))
    for i in range(b):
        for j in range(b):
            num = float(np.dot(anchors[i], positives[j]))
            den = math.sqrt(float(np.dot(anchors[i], anchors[i]))) * \
                math.sqrt(float(np.dot(positives[j], positives[j])))
            s[i, j] = num / den
    total = 0.0
    for i in range(b):
        row = np.exp(s[i] / tau - (s[i] / tau).max())
        total -= math.log(row[i] / row.sum())
    return total


def _w(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def _loss_of(out: Tensor, rng) -> Tensor:
    # random weighting makes every coordinate's gradient generic
    return tensor_sum(mul(out, _w(rng, out.shape)))


def _check_linear(tol=1e-6):
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True,
               dtype=np.float64, name="input")
    w = Tensor(rng.standard_normal((5, 4)), requires_grad=True,
               dtype=np.float64, name="weight")
    b = Tensor(rng.standard_normal(4), requires_grad=True,
               dtype=np.float64, name="bias")
    wcoef = _w(np.random.default_rng(12), (3, 4))

    def build():
        return tensor_sum(mul(linear(x, w, b), wcoef))

    return gradient_check(build, [x, w, b], tol)


def _check_conv_small(tol=1e-5):
    rng = np.random.default_rng(21)
    x = Tensor(rng.standard_normal((2, 3, 4, 4, 2)), requires_grad=True,
               dtype=np.float64, name="input")
    k = Tensor(rng.standard_normal((2, 2, 2, 2, 3)) * 0.5,
               requires_grad=True, dtype=np.float64, name="kernel")
    b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True,
               dtype=np.float64, name="bias")
    wcoef_box = {}

    def build():
        out = conv3d(x, k, b, stride=(1, 1, 1), padding="same")
        if "w" not in wcoef_box:
            wcoef_box["w"] = _w(np.random.default_rng(22), out.shape)
        return tensor_sum(mul(out, wcoef_box["w"]))

    return gradient_check(build, [x, k, b], tol)


def _check_conv_strided(tol=1e-5):
    rng = np.random.default_rng(31)
    x = Tensor(rng.standard_normal((2, 4, 5, 6, 3)), requires_grad=True,
               dtype=np.float64, name="input")
    k = Tensor(rng.standard_normal((3, 3, 3, 3, 4)) * 0.3,
               requires_grad=True, dtype=np.float64, name="kernel")
    b = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True,
               dtype=np.float64, name="bias")
    box = {}

    def build():
        out = conv3d(x, k, b, stride=(2, 1, 2), padding="same")
        if "w" not in box:
            box["w"] = _w(np.random.default_rng(32), out.shape)
        return tensor_sum(mul(out, box["w"]))

    return gradient_check(build, [x, k, b], tol)


def _check_instance_norm(tol=1e-4):
    rng = np.random.default_rng(41)
    x = Tensor(rng.standard_normal((2, 2, 3, 3, 4)), requires_grad=True,
               dtype=np.float64, name="input")
    g = Tensor(1.0 + 0.3 * rng.standard_normal(4), requires_grad=True,
               dtype=np.float64, name="gamma")
    b = Tensor(0.2 * rng.standard_normal(4), requires_grad=True,
               dtype=np.float64, name="beta")
    wcoef = _w(np.random.default_rng(42), (2, 2, 3, 3, 4))

    def build():
        return tensor_sum(mul(instance_norm(x, g, b, eps=1e-5), wcoef))

    return gradient_check(build, [x, g, b], tol)


def _check_relu(tol=1e-4):
    rng = np.random.default_rng(51)
    # keep values away from the kink so finite differences are valid
    vals = rng.standard_normal((3, 7))
    vals[np.abs(vals) < 1e-3] += 0.1
    x = Tensor(vals, requires_grad=True, dtype=np.float64, name="input")
    wcoef = _w(np.random.default_rng(52), (3, 7))

    def build():
        return tensor_sum(mul(relu(x), wcoef))

    return gradient_check(build, [x], tol)


def _check_pools(tol=1e-6):
    rng = np.random.default_rng(61)
    x = Tensor(rng.standard_normal((2, 3, 4, 4, 3)), requires_grad=True,
               dtype=np.float64, name="input")
    w1 = _w(np.random.default_rng(62), (2, 3, 3))
    w2 = _w(np.random.default_rng(63), (2, 3))

    def build():
        a = tensor_sum(mul(pool_spatial(x), w1))
        b = tensor_sum(mul(pool_global(x), w2))
        return tensor_sum(mul(a, b))  # scalar product couples both paths

    return gradient_check(build, [x], tol)


def _check_cosine(tol=1e-6):
    rng = np.random.default_rng(71)
    a = Tensor(rng.standard_normal((4, 6)), requires_grad=True,
               dtype=np.float64, name="anchors")
    c = Tensor(rng.standard_normal((4, 6)), requires_grad=True,
               dtype=np.float64, name="positives")
    wcoef = _w(np.random.default_rng(72), (4, 4))

    def build():
        return tensor_sum(mul(cosine_similarity_matrix(a, c), wcoef))

    return gradient_check(build, [a, c], tol)


def _check_cross_entropy(tol=1e-6):
    rng = np.random.default_rng(81)
    z = Tensor(rng.standard_normal((5, 4)), requires_grad=True,
               dtype=np.float64, name="logits")
    labels = np.array([0, 2, 1, 3, 2])

    def build():
        return cross_entropy_logits(z, labels, reduction="sum")

    return gradient_check(build, [z], tol)


def _check_info_nce(tol=1e-5):
    rng = np.random.default_rng(91)
    a = Tensor(rng.standard_normal((4, 8)), requires_grad=True,
               dtype=np.float64, name="anchors")
    c = Tensor(rng.standard_normal((4, 8)), requires_grad=True,
               dtype=np.float64, name="positives")

    def build():
        return info_nce(a, c, tau=0.2)

    return gradient_check(build, [a, c], tol)


def micro_encoder_config() -> EncoderConfig:
    return EncoderConfig(
        blocks=(BlockSpec(4, stride=(1, 1, 1)),
                BlockSpec(5, stride=(2, 2, 2)),
                BlockSpec(6, stride=(1, 2, 2))),
        tap_blocks=(2, 3),
        projection_dim=5,
    )


def build_micro_graph(params: dict[str, Tensor], clips: dict[str, Tensor],
                      config: EncoderConfig, loss_cfg: LossConfig) -> Tensor:
    """The compound loss on a 2-video micro-batch (both subtasks, two
    scales), for end-to-end gradient verification."""
    pyramids = {r: forward(clips[r], params, config) for r in "ost"}
    per_scale = {}
    eo_sp = pool_and_project(pyramids["o"], "o", "spatial", params, config)
    es_sp = pool_and_project(pyramids["s"], "s", "spatial", params, config)
    eo_gl = pool_and_project(pyramids["o"], "o", "global", params, config)
    et_gl = pool_and_project(pyramids["t"], "t", "global", params, config)
    for k in config.tap_blocks:
        per_scale[k] = (
            spatial_contrast_loss(eo_sp, es_sp, k, loss_cfg.tau),
            temporal_contrast_loss(eo_gl, et_gl, k, loss_cfg.tau),
        )
    return hd_nce(per_scale, loss_cfg).total


def _check_full_graph(tol=1e-4):
    config = micro_encoder_config()
    params = init_params(config, np.random.default_rng(101), dtype=np.float64)
    loss_cfg = LossConfig(tau=0.2, alphas={2: 0.5, 3: 1.0},
                          betas={2: 0.5, 3: 1.0},
                          spatial_scales=(2, 3), temporal_scales=(2, 3))
    rng = np.random.default_rng(102)
    clips = {r: Tensor(rng.uniform(-1, 1, (2, 4, 8, 8, 3)),
                       dtype=np.float64) for r in "ost"}

    def build():
        return build_micro_graph(params, clips, config, loss_cfg)

    return gradient_check(build, list(params.values()), tol,
                          step=1e-5, max_samples=6)


GRADCHECKS: dict[str, Callable[[], GradCheckReport]] = {
    "linear": _check_linear,
    "conv3d_2x2x2": _check_conv_small,
    "conv3d_3x3x3_strided": _check_conv_strided,
    "instance_norm": _check_instance_norm,
    "relu": _check_relu,
    "pooling": _check_pools,
    "cosine_similarity": _check_cosine,
    "cross_entropy": _check_cross_entropy,
    "info_nce": _check_info_nce,
    "full_compound_graph": _check_full_graph,
}


def run_gradchecks(verbose: bool = False) -> list[tuple[str, GradCheckReport]]:
    out = []
    for name, fn in GRADCHECKS.items():
        report = fn()
        out.append((name, report))
        if verbose:
            status = "pass" if report.passed else "FAIL"
            print(f"{name:24s} tol {report.tolerance:.0e}  max rel err "
                  f"{report.max_rel_err:10.3e}  {status}")
    return out


# ------------------------------ selfcheck ------------------------------

@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _selfcheck_loss_oracle() -> CheckResult:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        b = int(rng.integers(2, 9))
        d = int(rng.integers(2, 17))
        a = rng.standard_normal((b, d))
        c = rng.standard_normal((b, d))
        tau = float(rng.uniform(0.05, 1.0))
        got = info_nce(Tensor(a), Tensor(c), tau).item()
        want = oracle_info_nce(a, c, tau)
        worst = max(worst, abs(got - want))
    return CheckResult("info_nce_vs_oracle", worst < 1e-10,
                       f"max |diff| {worst:.2e} over 200 random instances")


def _selfcheck_uniform_anchor() -> CheckResult:
    worst = 0.0
    for b in (2, 4, 8):
        a = np.ones((b, 5))
        val = info_nce(Tensor(a), Tensor(a.copy()), 0.07).item()
        worst = max(worst, abs(val - b * math.log(b)))
    return CheckResult("uniform_similarity_anchor", worst < 1e-6,
                       f"max |L - B ln B| = {worst:.2e}")


def _selfcheck_pool_decomposition() -> CheckResult:
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal((3, 4, 5, 6, 7)))
    sp = pool_spatial(x).data.mean(axis=1)
    gl = pool_global(x).data
    err = np.abs(sp - gl).max()
    return CheckResult("pool_global_equals_mean_of_spatial", err < 1e-6,
                       f"max |diff| {err:.2e}")


def _selfcheck_determinism() -> CheckResult:
    cfg = SyntheticConfig(num_videos=4, frames_per_video=12,
                          noise_std=0.05)
    v1 = generate_synthetic(cfg, seed=3)
    v2 = generate_synthetic(cfg, seed=3)
    same_data = all(np.array_equal(a.frames, b.frames)
                    for a, b in zip(v1, v2))
    fam = AugmentationFamily(crop_output=(24, 24))
    t1 = make_triplet(v1[0].frames, 6, (fam, fam, fam),
                      np.random.default_rng(5))
    t2 = make_triplet(v2[0].frames, 6, (fam, fam, fam),
                      np.random.default_rng(5))
    same_aug = (np.array_equal(t1.u_o, t2.u_o)
                and np.array_equal(t1.u_s, t2.u_s)
                and np.array_equal(t1.u_t, t2.u_t))
    return CheckResult("seeded_determinism", same_data and same_aug,
                       f"dataset {same_data}, augmentation {same_aug}")


def _selfcheck_weight_linearity() -> CheckResult:
    vals = {3: 1.7, 4: 0.9, 5: 2.3}
    base = LossConfig(alphas={3: 0.25, 4: 0.5, 5: 1.0},
                      betas={3: 0.25, 4: 0.5, 5: 1.0})
    scaled = LossConfig(alphas={k: 3.0 * v for k, v in base.alphas.items()},
                        betas={k: 3.0 * v for k, v in base.betas.items()})
    per = {k: (Tensor(np.asarray(v)), Tensor(np.asarray(v * 0.5)))
           for k, v in vals.items()}
    t1 = hd_nce(per, base).total_value
    t2 = hd_nce(per, scaled).total_value
    return CheckResult("weight_scaling_linearity", abs(t2 - 3.0 * t1) < 1e-12,
                       f"|3*L - L_scaled| = {abs(t2 - 3.0 * t1):.2e}")


def run_selfcheck(verbose: bool = False) -> list[CheckResult]:
    results = []
    for fn in (_selfcheck_loss_oracle, _selfcheck_uniform_anchor,
               _selfcheck_pool_decomposition, _selfcheck_determinism,
               _selfcheck_weight_linearity):
        t0 = time.perf_counter()
        r = fn()
        if verbose:
            status = "pass" if r.ok else "FAIL"
            print(f"{r.name:36s} {status}  {r.detail} "
                  f"({time.perf_counter() - t0:.1f}s)")
        results.append(r)
    return results
