"""Central finite-difference gradient checking for module parameters.

Used by the oracle suite and tests: the analytic (autograd) gradient of a
scalar-valued closure is compared against a hand-rolled two-sided difference,
parameter element by parameter element. Run modules in float64 when checking.
"""

from __future__ import annotations

from typing import Callable, Sequence

import torch
from torch import Tensor


def finite_difference_gradients(
    fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-6
) -> list[Tensor]:
    """Two-sided difference of ``fn()`` w.r.t. each element of ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            grad = torch.zeros_like(p)
            flat, gflat = p.reshape(-1), grad.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                f_plus = float(fn())
                flat[i] = orig - step
                f_minus = float(fn())
                flat[i] = orig
                gflat[i] = (f_plus - f_minus) / (2.0 * step)
            grads.append(grad)
    return grads


def relative_gradient_error(
    fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-6
) -> float:
    """|| analytic - numeric || / max(||analytic||, ||numeric||)."""
    loss = fn()
    analytic = torch.autograd.grad(loss, params, allow_unused=False)
    numeric = finite_difference_gradients(fn, params, step=step)
    a = torch.cat([g.reshape(-1) for g in analytic])
    n = torch.cat([g.reshape(-1) for g in numeric])
    denom = max(a.norm().item(), n.norm().item(), 1e-12)
    return (a - n).norm().item() / denom
