"""The fixed set of differentiable operations used by the network.

Every op accepts ``(C, H, W)`` or ``(N, C, H, W)`` tensors (channel axis is
always ``-3``), computes in the dtype of its inputs, and attaches an exact
hand-written backward pass to its output.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor

BCE_EPS = 1e-6


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return x[None], True
    raise ShapeError(f"expected a (C,H,W) or (N,C,H,W) tensor, got shape {x.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int) -> np.ndarray:
    """(N, Hp, Wp, C) channels-last input -> (N*ho*wo, kh*kw*C) patch matrix."""
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, :, di, dj, :] = xp[:, di:di + ho, dj:dj + wo, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation with symmetric zero padding."""
    xb, squeeze = _as_batch(x.data)
    w = weight.data
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be (O,C,kh,kw), got {w.shape}")
    n, c, h, wd = xb.shape
    o, wc, kh, kw = w.shape
    if wc != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(f"conv2d kernel {w.shape} does not fit padded input {x.shape}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match weight {w.shape}")

    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    hp, wp = h + 2 * padding, wd + 2 * padding
    xp = np.zeros((n, hp, wp, c), dtype=xb.dtype)
    xp[:, padding:padding + h, padding:padding + wd, :] = xb.transpose(0, 2, 3, 1)
    cols = _im2col(xp, kh, kw, ho, wo)
    wmat = w.transpose(2, 3, 1, 0).reshape(kh * kw * c, o)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(g):
        gb = g[None] if squeeze else g
        gmat = gb.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (cols.T @ gmat).reshape(kh, kw, c, o).transpose(3, 2, 0, 1)
        gbias = gmat.sum(axis=0) if bias is not None else None
        gcols = (gmat @ wmat.T).reshape(n, ho, wo, kh, kw, c)
        gxp = np.zeros((n, hp, wp, c), dtype=xb.dtype)
        for di in range(kh):
            for dj in range(kw):
                gxp[:, di:di + ho, dj:dj + wo, :] += gcols[:, :, :, di, dj, :]
        gx = gxp[:, padding:padding + h, padding:padding + wd, :].transpose(0, 3, 1, 2)
        gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        return gx, np.ascontiguousarray(gw), gbias

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out[0] if squeeze else out, _parents=parents, _backward=backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return Tensor(out, _parents=(x,), _backward=lambda g: (g * mask,))


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2.

    Ties route the whole gradient to the first maximum in row-major window
    order, i.e. (0,0), (0,1), (1,0), (1,1).
    """
    xb, squeeze = _as_batch(x.data)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {x.shape}")
    win = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = g[None] if squeeze else g
        onehot = (np.arange(4) == idx[..., None]).astype(x.dtype)
        gwin = onehot * gb[..., None]
        gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx[0] if squeeze else gx,)

    return Tensor(out[0] if squeeze else out, _parents=(x,), _backward=backward)


@lru_cache(maxsize=64)
def _upsample_matrix(n: int, dtype_name: str) -> np.ndarray:
    # output i samples input coordinate (i + 0.5) / 2 - 0.5, clamped to [0, n-1]
    m = np.zeros((2 * n, n), dtype=np.float64)
    for i in range(2 * n):
        s = min(max((i + 0.5) / 2 - 0.5, 0.0), n - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n - 1)
        frac = s - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m.astype(dtype_name)


def bilinear_upsample2(x: Tensor) -> Tensor:
    """Double both spatial extents with half-pixel-centre bilinear interpolation."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected a (C,H,W) or (N,C,H,W) tensor, got shape {x.shape}")
    h, w = x.shape[-2:]
    uh = _upsample_matrix(h, x.dtype.name)
    uw = _upsample_matrix(w, x.dtype.name)
    out = uh @ x.data @ uw.T
    return Tensor(out, _parents=(x,), _backward=lambda g: (uh.T @ g @ uw,))


def concat_channels(*xs: Tensor) -> Tensor:
    """Concatenate along the channel axis; zero-channel inputs are allowed."""
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    lead = xs[0].shape[:-3]
    spatial = xs[0].shape[-2:]
    for t in xs[1:]:
        if t.shape[-2:] != spatial or t.shape[:-3] != lead:
            raise ShapeError(f"concat_channels spatial mismatch: {xs[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in xs], axis=-3)
    bounds = np.cumsum([0] + [t.shape[-3] for t in xs])

    def backward(g):
        return tuple(g[..., bounds[k]:bounds[k + 1], :, :] for k in range(len(xs)))

    return Tensor(out, _parents=tuple(xs), _backward=backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.shape[-3]
    if not 0 <= start <= stop <= c:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for shape {x.shape}")
    out = x.data[..., start:stop, :, :].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop, :, :] = g
        return (gx,)

    return Tensor(out, _parents=(x,), _backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return Tensor(out, _parents=(x,), _backward=lambda g: (g * out * (1.0 - out),))


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.dtype.type(factor)
    return Tensor(x.data * f, _parents=(x,), _backward=lambda g: (g * f,))


def add(*xs: Tensor) -> Tensor:
    shape = xs[0].shape
    for t in xs[1:]:
        if t.shape != shape:
            raise ShapeError(f"add shape mismatch: {shape} vs {t.shape}")
    out = xs[0].data.copy()
    for t in xs[1:]:
        out = out + t.data
    return Tensor(out, _parents=tuple(xs), _backward=lambda g: tuple(g for _ in xs))


def bce_loss(predicted: Tensor, target, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross entropy; ``predicted`` is clamped to [eps, 1-eps]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != predicted.shape:
        raise ShapeError(f"bce_loss shape mismatch: predicted {predicted.shape} vs target {t.shape}")
    p = predicted.data
    t = t.astype(p.dtype, copy=False)
    pc = np.clip(p, eps, 1.0 - eps)
    n = p.size
    loss = -np.mean(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    inside = (p >= eps) & (p <= 1.0 - eps)

    def backward(g):
        gp = (pc - t) / (pc * (1.0 - pc)) / n
        return (np.where(inside, gp * g, 0).astype(p.dtype, copy=False),)

    return Tensor(np.asarray(loss, dtype=p.dtype), _parents=(predicted,), _backward=backward)
