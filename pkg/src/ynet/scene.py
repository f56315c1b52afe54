"""Semantic scene maps and their on-disk form (class-index PNG + JSON manifest)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

DRONE_CLASSES = ("pavement", "terrain", "structure", "tree", "road")


@dataclass
class Scene:
    """Class-index grid plus the metadata needed to move between coordinate frames.

    ``semantic`` is stored at the working (downsampled) resolution. ``homography``
    maps world meters to *original* pixels; ``original_size`` is ``(H, W)`` of the
    source image before downsampling and padding.
    """

    semantic: np.ndarray
    class_names: tuple[str, ...] = DRONE_CLASSES
    downsample_factor: float = 1.0
    homography: Optional[np.ndarray] = None
    scene_id: str = "scene"
    original_size: Optional[tuple[int, int]] = None

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.uint8)
        if self.semantic.ndim != 2:
            raise DataError(f"semantic map must be 2-D, got shape {self.semantic.shape}")
        self.class_names = tuple(self.class_names)
        if self.semantic.size and int(self.semantic.max()) >= self.n_classes:
            raise DataError(
                f"scene {self.scene_id}: class index {int(self.semantic.max())} >= N_c={self.n_classes}"
            )
        if self.downsample_factor <= 0:
            raise ConfigError("downsample_factor must be positive")
        if self.homography is not None:
            self.homography = np.asarray(self.homography, dtype=np.float64).reshape(3, 3)
            if abs(np.linalg.det(self.homography)) <= 1e-12:
                raise DataError(f"scene {self.scene_id}: homography is singular")
        if self.original_size is None:
            self.original_size = (
                int(round(self.height * self.downsample_factor)),
                int(round(self.width * self.downsample_factor)),
            )

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def height(self) -> int:
        return self.semantic.shape[0]

    @property
    def width(self) -> int:
        return self.semantic.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.semantic.shape

    def padded(self, multiple: int = 32) -> "Scene":
        """Zero-pad bottom/right so both extents divide ``multiple``; coordinates are unaffected."""
        h, w = self.shape
        ph, pw = -h % multiple, -w % multiple
        if not ph and not pw:
            return self
        sem = np.pad(self.semantic, ((0, ph), (0, pw)))
        return Scene(sem, self.class_names, self.downsample_factor, self.homography,
                     self.scene_id, self.original_size)

    def contains(self, points) -> np.ndarray:
        """True where the rounded ``(x, y)`` point falls on a grid cell."""
        pts = np.floor(np.asarray(points, dtype=np.float64).reshape(-1, 2) + 0.5)
        x, y = pts[:, 0], pts[:, 1]
        return (x >= 0) & (y >= 0) & (x < self.width) & (y < self.height)

    def manifest(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "n_classes": self.n_classes,
            "classes": {str(i): name for i, name in enumerate(self.class_names)},
            "downsample_factor": self.downsample_factor,
            "homography": None if self.homography is None else self.homography.ravel().tolist(),
        }


def manifest_path(png_path) -> Path:
    return Path(png_path).with_suffix(".json")


def save_scene(scene: Scene, png_path) -> Path:
    """Write the semantic map at original resolution plus its side-car manifest."""
    png_path = Path(png_path)
    oh, ow = scene.original_size
    f = scene.downsample_factor
    # drop any bottom/right padding before restoring the original resolution
    sem = scene.semantic[: max(1, round(oh / f)), : max(1, round(ow / f))]
    img = Image.fromarray(np.ascontiguousarray(sem), mode="L")
    if (oh, ow) != sem.shape:
        img = img.resize((ow, oh), Image.NEAREST)
    img.save(png_path, format="PNG")
    with open(manifest_path(png_path), "w") as fh:
        json.dump(scene.manifest(), fh, indent=2, sort_keys=True)
    return png_path


def load_scene(png_path, pad_multiple: Optional[int] = 32) -> Scene:
    """Read a class-index PNG and its manifest, downsample, and pad."""
    png_path = Path(png_path)
    mpath = manifest_path(png_path)
    if not mpath.exists():
        raise ConfigError(f"missing scene manifest {mpath}")
    if not png_path.exists():
        raise ConfigError(f"missing semantic map {png_path}")
    with open(mpath) as fh:
        man = json.load(fh)
    classes = man.get("classes")
    if classes is None or "n_classes" not in man:
        raise ConfigError(f"{mpath}: manifest needs 'classes' and 'n_classes'")
    names = tuple(classes[str(i)] for i in range(int(man["n_classes"])))
    factor = float(man.get("downsample_factor", 1.0))
    img = Image.open(png_path)
    if img.mode != "L":
        raise DataError(f"{png_path}: expected an 8-bit single-channel PNG, got mode {img.mode}")
    ow, oh = img.size
    if factor != 1.0:
        img = img.resize((max(1, round(ow / factor)), max(1, round(oh / factor))), Image.NEAREST)
    scene = Scene(
        np.array(img),
        names,
        factor,
        man.get("homography"),
        man.get("scene_id", png_path.stem),
        (oh, ow),
    )
    return scene.padded(pad_multiple) if pad_multiple else scene


def load_scene_dir(directory, scene_ids: Sequence[str] | None = None, pad_multiple: int = 32) -> dict[str, Scene]:
    directory = Path(directory)
    if scene_ids is None:
        scene_ids = sorted(p.stem for p in directory.glob("*.png"))
    return {sid: load_scene(directory / f"{sid}.png", pad_multiple) for sid in scene_ids}
