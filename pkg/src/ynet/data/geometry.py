from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DataError

DET_EPS = 1e-12


def _check_homography(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64).reshape(3, 3)
    if abs(np.linalg.det(h)) <= DET_EPS:
        raise DataError("homography is singular (|det| <= 1e-12)")
    return h


def apply_homography(points, h) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    homog = np.hstack([flat, np.ones((len(flat), 1))]) @ np.asarray(h, dtype=np.float64).T
    return (homog[:, :2] / homog[:, 2:3]).reshape(pts.shape)


def world_to_pixel(points, homography) -> np.ndarray:
    """Map world meters to (original-resolution) pixels."""
    return apply_homography(points, _check_homography(homography))


def pixel_to_world(points, homography) -> np.ndarray:
    return apply_homography(points, np.linalg.inv(_check_homography(homography)))


def rescale_coords(points, factor: float) -> np.ndarray:
    """Original pixels -> working (downsampled) pixels."""
    if not factor > 0:
        raise ConfigError(f"rescale factor must be positive, got {factor}")
    return np.asarray(points, dtype=np.float64) / factor


def upscale_coords(points, factor: float) -> np.ndarray:
    """Exact inverse of :func:`rescale_coords`."""
    if not factor > 0:
        raise ConfigError(f"rescale factor must be positive, got {factor}")
    return np.asarray(points, dtype=np.float64) * factor
