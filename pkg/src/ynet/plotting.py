"""Static PNG renderings of scenes, tracks and hypotheses."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import ShapeError
from .scene import Scene

CLASS_COLORS = {
    "pavement": (200, 200, 200),
    "terrain": (190, 170, 120),
    "structure": (90, 90, 100),
    "tree": (60, 110, 60),
    "road": (50, 50, 50),
}
FALLBACK = [(230, 200, 160), (160, 200, 230), (200, 160, 230), (140, 140, 140)]
PAST = (30, 80, 255)
TRUTH = (20, 200, 40)
PRED = (235, 30, 30)


def scene_rgb(scene: Scene) -> np.ndarray:
    """Class colours at the original image size, padding removed."""
    palette = np.array([CLASS_COLORS.get(n, FALLBACK[i % len(FALLBACK)]) for i, n in enumerate(scene.class_names)],
                       dtype=np.uint8)
    oh, ow = scene.original_size
    f = scene.downsample_factor
    sem = scene.semantic[: max(1, round(oh / f)), : max(1, round(ow / f))]
    img = Image.fromarray(palette[sem])
    if img.size != (ow, oh):
        img = img.resize((ow, oh), Image.NEAREST)
    return np.asarray(img)


def overlay_heatmap(rgb: np.ndarray, heatmap: np.ndarray, strength: float = 0.8) -> np.ndarray:
    """Blend a working-resolution map into the red channel as intensity.

    The map is normalised by its maximum and upsampled by nearest neighbour, so
    the brightest overlay block is the one holding the map's argmax.
    """
    hm = np.asarray(heatmap, dtype=np.float64)
    if hm.ndim != 2:
        raise ShapeError(f"heatmap must be 2-D, got {hm.shape}")
    peak = hm.max()
    norm = hm / peak if peak > 0 else np.zeros_like(hm)
    oh, ow = rgb.shape[:2]
    fy, fx = oh / hm.shape[0], ow / hm.shape[1]
    rows = np.minimum((np.arange(oh) / fy).astype(int), hm.shape[0] - 1)
    cols = np.minimum((np.arange(ow) / fx).astype(int), hm.shape[1] - 1)
    up = norm[rows][:, cols]
    out = rgb.astype(np.float64)
    a = strength * up[..., None]
    out = (1 - a) * out + a * np.array([255.0, 255.0, 0.0])
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _polyline(draw: ImageDraw.ImageDraw, pts, color, width: int = 1, dot: int = 1) -> None:
    pts = [(float(x), float(y)) for x, y in np.asarray(pts, dtype=np.float64).reshape(-1, 2)]
    if len(pts) > 1:
        draw.line(pts, fill=color, width=width)
    for x, y in pts:
        draw.ellipse([x - dot, y - dot, x + dot, y + dot], fill=color)


def render(
    scene: Scene,
    past=None,
    truth=None,
    predictions: Sequence = (),
    heatmap: Optional[np.ndarray] = None,
) -> Image.Image:
    """Scene with past (blue), ground truth (green) and predictions (red).

    Coordinates are original-resolution pixels ``(x, y)``; ``heatmap`` is at the
    scene's working resolution.
    """
    rgb = scene_rgb(scene)
    if heatmap is not None:
        hm = np.asarray(heatmap)
        oh, ow = scene.original_size
        f = scene.downsample_factor
        rgb = overlay_heatmap(rgb, hm[: max(1, round(oh / f)), : max(1, round(ow / f))])
    img = Image.fromarray(rgb)
    draw = ImageDraw.Draw(img)
    width = max(1, round(min(img.size) / 200))
    for p in predictions:
        _polyline(draw, p, PRED, width)
    if truth is not None:
        _polyline(draw, np.vstack([np.asarray(past)[-1:], truth]) if past is not None else truth, TRUTH, width)
    if past is not None:
        _polyline(draw, past, PAST, width)
    return img


def save_png(img: Image.Image, path) -> Path:
    path = Path(path)
    # no timestamps or text chunks, so bytes depend only on pixels
    img.save(path, format="PNG", optimize=False, compress_level=6)
    return path
