"""Minimal dense tensor library with reverse-mode gradients."""

from .core import (
    NonFiniteError,
    Tape,
    Tensor,
    TensorError,
    backward,
)
from .gradcheck import GradCheckReport, gradient_check
from .kernels import backend_name
from .ops import (
    add,
    batch_slice,
    conv3d,
    cosine_similarity_matrix,
    cross_entropy_logits,
    instance_norm,
    linear,
    mul,
    pool,
    pool_global,
    pool_spatial,
    relu,
    scale,
    tensor_sum,
    time_slice,
)

__all__ = [
    "NonFiniteError", "Tape", "Tensor", "TensorError", "backward",
    "GradCheckReport", "gradient_check", "backend_name",
    "add", "batch_slice", "conv3d", "cosine_similarity_matrix",
    "cross_entropy_logits", "instance_norm", "linear", "mul", "pool",
    "pool_global", "pool_spatial", "relu", "scale", "tensor_sum",
    "time_slice",
]
