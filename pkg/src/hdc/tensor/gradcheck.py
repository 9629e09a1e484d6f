"""Central finite-difference verification of analytic gradients.

Runs in float64. For each parameter tensor the checker perturbs a set of
coordinates (all of them for small tensors, a seeded sample for large ones)
and compares the analytic gradient against (f(x+h) - f(x-h)) / 2h.

Relative error uses ``|a - n| / max(|a|, |n|, 1e-3)``: coordinates where
both gradients are tiny are compared on an absolute scale of 1e-3, which
keeps finite-difference roundoff (~1e-10 at h=1e-5) far below the pass
thresholds used by the suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Tape, Tensor, backward

_FLOOR = 1e-3


@dataclass
class ParamReport:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    tolerance: float
    params: list[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.max_rel_err <= self.tolerance for p in self.params)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for p in self.params:
            verdict = "ok" if p.max_rel_err <= self.tolerance else "FAIL"
            out.append(f"{p.name:30s} rel_err {p.max_rel_err:10.3e} "
                       f"({p.checked} coords) {verdict}")
        return out


def gradient_check(build_loss: Callable[[], Tensor],
                   params: Sequence[Tensor],
                   tolerance: float,
                   step: float = 1e-5,
                   max_samples: int = 48,
                   seed: int = 0) -> GradCheckReport:
    """Compare analytic and finite-difference gradients of a scalar graph.

    ``build_loss`` must rebuild the forward graph from the current values of
    ``params`` every time it is called. Parameters must be float64.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ValueError(f"gradient_check requires float64 params "
                             f"({p.name or 'param'} is {p.dtype})")
        p.zero_grad()

    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for idx, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        if flat.size <= max_samples:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_samples, replace=False)
        worst = 0.0
        for c in coords:
            keep = flat[c]
            flat[c] = keep + step
            up = build_loss().item()
            flat[c] = keep - step
            down = build_loss().item()
            flat[c] = keep
            numeric = (up - down) / (2 * step)
            a = analytic.reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), _FLOOR)
            worst = max(worst, rel)
        report.params.append(
            ParamReport(p.name or f"param{idx}", worst, len(coords)))
    return report
