from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import NumericalError
from .tensor import Parameter


def adam_step(
    params: Iterable[Parameter],
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place to every parameter."""
    params = list(params)
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise NumericalError(f"adam_step: parameters {missing} have no gradient")
    b1, b2 = betas
    for p in params:
        g = p.grad
        p.step += 1
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** p.step)
        v_hat = p.v / (1.0 - b2 ** p.step)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
        p.m = p.m.astype(p.dtype, copy=False)
        p.v = p.v.astype(p.dtype, copy=False)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None
