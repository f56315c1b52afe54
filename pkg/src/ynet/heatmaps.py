"""Grid encodings of trajectories, scenes and conditioning points.

Points are ``(x, y)`` pixel coordinates: ``x`` indexes columns, ``y`` rows.
Grids are indexed ``[row, col]``. Peaks sit on the rounded point
(``floor(v + 0.5)``).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError

PAST_ENCODINGS = ("linear", "as_printed")


def round_point(point) -> tuple[int, int]:
    x, y = np.floor(np.asarray(point, dtype=np.float64) + 0.5)
    return int(x), int(y)


def _check_in_bounds(points: np.ndarray, shape: tuple[int, int], what: str) -> None:
    h, w = shape
    for k, p in enumerate(points):
        x, y = round_point(p)
        if not (0 <= x < w and 0 <= y < h):
            raise DataError(f"{what} {k} at {tuple(np.round(p, 3))} lies outside the {w}x{h} scene")


def _distance_grid(center: tuple[int, int], shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    cx, cy = center
    dx = np.abs(np.arange(w, dtype=np.float64) - cx)
    dy = np.abs(np.arange(h, dtype=np.float64) - cy)
    return np.hypot(dy[:, None], dx[None, :])


def encode_past(
    track,
    shape: tuple[int, int],
    encoding: str = "linear",
    dtype=np.float32,
) -> np.ndarray:
    """One distance-decay channel per observed frame, oldest first.

    ``linear`` gives ``1 - d / d_max`` (1 on the agent, 0 at the farthest
    pixel). ``as_printed`` gives ``2 d / d_max``, which is minimal on the
    agent; it exists only for comparison runs.
    """
    if encoding not in PAST_ENCODINGS:
        raise ConfigError(f"unknown past encoding {encoding!r}; choose from {PAST_ENCODINGS}")
    pts = np.asarray(track, dtype=np.float64).reshape(-1, 2)
    _check_in_bounds(pts, shape, "past frame")
    out = np.empty((len(pts),) + tuple(shape), dtype=np.float64)
    for n, p in enumerate(pts):
        d = _distance_grid(round_point(p), shape)
        d_max = d.max()
        ratio = d / d_max if d_max > 0 else np.zeros_like(d)
        out[n] = 1.0 - ratio if encoding == "linear" else 2.0 * ratio
    return out.astype(dtype)


def encode_semantic(semantic: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    """One-hot ``(N_c, H, W)`` stack; channel k is class index k."""
    sem = np.asarray(semantic)
    if sem.size and int(sem.max()) >= n_classes:
        raise DataError(f"class index {int(sem.max())} >= N_c={n_classes}")
    return (np.arange(n_classes)[:, None, None] == sem[None]).astype(dtype)


def build_input(past: np.ndarray, semantic: np.ndarray) -> np.ndarray:
    """Semantic channels first, then past frames oldest to newest."""
    if past.ndim != 3 or past.shape[0] == 0:
        raise ShapeError(f"past heatmap stack must be non-empty (n_p, H, W), got {past.shape}")
    if semantic.shape[1:] != past.shape[1:]:
        raise ShapeError(f"semantic {semantic.shape} and past {past.shape} differ spatially")
    return np.concatenate([semantic, past.astype(semantic.dtype, copy=False)], axis=0)


def gaussian_target(point, shape: tuple[int, int], sigma: float = 4.0, dtype=np.float64) -> np.ndarray:
    """Peak-normalised Gaussian ``exp(-d^2 / (2 sigma^2))`` around the rounded point."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    pts = np.asarray(point, dtype=np.float64).reshape(1, 2)
    _check_in_bounds(pts, shape, "target point")
    d = _distance_grid(round_point(pts[0]), shape)
    return np.exp(-(d * d) / (2.0 * sigma * sigma)).astype(dtype)


def gaussian_targets(points, shape: tuple[int, int], sigma: float = 4.0, dtype=np.float32) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((0,) + tuple(shape), dtype=dtype)
    return np.stack([gaussian_target(p, shape, sigma) for p in pts]).astype(dtype)


def avg_pool2(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even extents, got {grid.shape}")
    lead = grid.shape[:-2]
    return grid.reshape(lead + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))


def encode_conditioning(
    goal,
    waypoints: Sequence,
    shape: tuple[int, int],
    levels: int,
    sigma: float = 4.0,
    dtype=np.float32,
) -> list[np.ndarray]:
    """Conditioning pyramid for the trajectory decoder.

    Channels are ordered earliest waypoint to goal. Entry ``k`` of the result
    has spatial extent ``shape / 2**k`` for ``k = 0 .. levels``.
    """
    pts = list(np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)) + [np.asarray(goal, dtype=np.float64)]
    full = gaussian_targets(pts, shape, sigma, dtype=np.float64)
    pyramid = [full]
    for _ in range(levels):
        pyramid.append(avg_pool2(pyramid[-1]))
    return [p.astype(dtype) for p in pyramid]
