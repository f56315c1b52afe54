"""Central finite-difference gradient checking (use in 64-bit mode)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, eps: float = 1e-6, indices=None) -> np.ndarray:
    """d fn / d arr by central differences, perturbing ``arr`` in place.

    With ``indices`` only those flat positions are probed; others stay zero.
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for k in positions:
        orig = flat[k]
        flat[k] = orig + eps
        up = fn()
        flat[k] = orig - eps
        down = fn()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` (0 when both vanish)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_op(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    eps: float = 1e-6,
) -> float:
    """Worst relative error over all inputs of ``sum(op(*inputs) * R)`` for a random R."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*tensors)
    proj = rng.standard_normal(out.shape)
    out.backward(proj)

    def value() -> float:
        return float(np.sum(op(*[Tensor(a) for a in arrays]).data * proj))

    worst = 0.0
    for a, t in zip(arrays, tensors):
        num = numerical_grad(value, a, eps)
        worst = max(worst, relative_error(t.grad, num))
    return worst
