"""Loss assembly, augmentation, teacher forcing and the optimisation loop."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, adam_step, add, bce_loss, scale, slice_channels, zero_grad
from .data.geometry import rescale_coords
from .data.tracks import WindowedSample
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .heatmaps import build_input, encode_conditioning, encode_past, encode_semantic, gaussian_targets
from .model import ModelConfig, YNet
from .scene import Scene

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    global_scale: float = 1000.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.global_scale) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 100
    lambda1: float = 1.0
    lambda2: float = 1.0
    global_scale: float = 1000.0
    temperature: float = 1.0
    sigma_h: float = 4.0
    alpha: float = 6.0
    beta: float = 0.5
    seed: int = 0
    waypoint_frames: tuple[int, ...] = ()
    augment: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        self.waypoint_frames = tuple(int(w) for w in self.waypoint_frames)
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and lr > 0 are required")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.global_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["waypoint_frames"] = list(self.waypoint_frames)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainSample:
    """Network input plus every supervision target for one agent window.

    ``targets`` holds one Gaussian heatmap per future step; the goal, waypoint
    and auxiliary targets are views into it.
    """

    input: np.ndarray
    targets: np.ndarray
    past: np.ndarray
    future: np.ndarray
    scene_id: str
    key: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.input.shape[-2:]


def make_sample(
    scene: Scene,
    window: WindowedSample,
    sigma_h: float = 4.0,
    encoding: str = "linear",
) -> TrainSample:
    """Build network input and targets from a window in original-pixel coordinates."""
    past = rescale_coords(window.past, scene.downsample_factor)
    future = rescale_coords(window.future, scene.downsample_factor)
    shape = scene.shape
    x = build_input(encode_past(past, shape, encoding), encode_semantic(scene.semantic, scene.n_classes))
    targets = gaussian_targets(future, shape, sigma_h)
    return TrainSample(x, targets, past, future, scene.scene_id, window.key)


def goal_wp_targets(sample: TrainSample, config: ModelConfig) -> np.ndarray:
    idx = [config.future_index(w) for w in config.waypoint_frames] + [config.n_f - 1]
    return sample.targets[idx]


# -- dihedral augmentation ---------------------------------------------------------

def _transform_points(pts: np.ndarray, variant: int, shape: tuple[int, int]) -> np.ndarray:
    k, flip = variant % 4, variant // 4
    h, w = shape
    out = np.array(pts, dtype=np.float64, copy=True)
    for _ in range(k):
        # np.rot90 (counter-clockwise): new[i, j] = old[j, W-1-i]
        x, y = out[..., 0].copy(), out[..., 1].copy()
        out[..., 0], out[..., 1] = y, (w - 1) - x
        h, w = w, h
    if flip:
        out[..., 0] = (w - 1) - out[..., 0]
    return out


def _transform_grid(grid: np.ndarray, variant: int) -> np.ndarray:
    out = np.rot90(grid, k=variant % 4, axes=(-2, -1))
    if variant // 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def inverse_variant(variant: int) -> int:
    if not 0 <= variant < 8:
        raise ConfigError(f"augmentation variant must be in 0..7, got {variant}")
    return variant if variant >= 4 else (4 - variant) % 4


def augment(sample: TrainSample, variant: int) -> TrainSample:
    """Apply dihedral element ``variant`` (rotate ``variant % 4`` quarter turns, then
    flip horizontally if ``variant >= 4``) to grids and coordinates alike."""
    if not 0 <= variant < 8:
        raise ConfigError(f"augmentation variant must be in 0..7, got {variant}")
    if variant == 0:
        return sample
    shape = sample.shape
    return replace(
        sample,
        input=_transform_grid(sample.input, variant),
        targets=_transform_grid(sample.targets, variant),
        past=_transform_points(sample.past, variant, shape),
        future=_transform_points(sample.future, variant, shape),
        key=f"{sample.key}#aug{variant}",
    )


def augment_all(samples: Sequence[TrainSample]) -> list[TrainSample]:
    return [augment(s, v) for s in samples for v in range(8)]


# -- conditioning and loss ---------------------------------------------------------

def teacher_condition(sample: TrainSample, config: ModelConfig, sigma_h: float = 4.0) -> list[np.ndarray]:
    """Ground-truth goal/waypoint conditioning pyramid for the trajectory decoder."""
    wps = [sample.future[config.future_index(w)] for w in config.waypoint_frames]
    return encode_conditioning(sample.future[-1], wps, sample.shape, config.n_blocks, sigma_h)


def compute_loss(
    goal_maps: Tensor,
    traj_maps: Tensor,
    goal_targets: np.ndarray,
    traj_targets: np.ndarray,
    n_waypoints: int,
    weights: LossWeights = LossWeights(),
) -> tuple[Tensor, dict[str, float]]:
    """Total ``scale * (L_goal + lambda1 * L_wp + lambda2 * L_traj)`` and its terms.

    ``goal_maps`` is the train-mode goal-decoder output: ``n_waypoints``
    waypoint maps, the goal map, then the ``n_f`` auxiliary maps. Each map's
    BCE is a mean over its pixels (and the batch); terms sum over maps.
    Auxiliary maps are supervised with the per-step trajectory targets and
    count toward ``L_wp``.
    """
    n_cond = n_waypoints + 1
    n_f = traj_targets.shape[-3]
    if goal_maps.shape[-3] != n_cond + n_f:
        raise ShapeError(f"goal term: expected {n_cond + n_f} goal-decoder maps, got {goal_maps.shape}")
    if goal_targets.shape[-3] != n_cond or goal_targets.shape[-2:] != goal_maps.shape[-2:]:
        raise ShapeError(f"waypoint term: targets {goal_targets.shape} vs maps {goal_maps.shape}")
    if traj_maps.shape != traj_targets.shape:
        raise ShapeError(f"trajectory term: maps {traj_maps.shape} vs targets {traj_targets.shape}")

    def summed(maps: Tensor, targets: np.ndarray, count: int) -> Tensor:
        # mean over `count` equally sized maps times `count` == sum of per-map means
        return scale(bce_loss(maps, targets), float(count))

    goal = summed(slice_channels(goal_maps, n_waypoints, n_cond), goal_targets[..., n_waypoints:n_cond, :, :], 1)
    wp_parts = [summed(slice_channels(goal_maps, n_cond, n_cond + n_f), traj_targets, n_f)]
    if n_waypoints:
        wp_parts.append(summed(slice_channels(goal_maps, 0, n_waypoints),
                               goal_targets[..., :n_waypoints, :, :], n_waypoints))
    wp = add(*wp_parts) if len(wp_parts) > 1 else wp_parts[0]
    traj = summed(traj_maps, traj_targets, n_f)
    inner = add(goal, scale(wp, weights.lambda1), scale(traj, weights.lambda2))
    total = scale(inner, weights.global_scale)
    terms = {"L_goal": goal.item(), "L_wp": wp.item(), "L_traj": traj.item(), "total": total.item()}
    return total, terms


def batch_arrays(model: YNet, batch: Sequence[TrainSample], sigma_h: float):
    cfg = model.config
    x = np.stack([s.input for s in batch]).astype(model.dtype)
    gt = np.stack([goal_wp_targets(s, cfg) for s in batch]).astype(model.dtype)
    tt = np.stack([s.targets for s in batch]).astype(model.dtype)
    conds = [teacher_condition(s, cfg, sigma_h) for s in batch]
    cond = [np.stack([c[k] for c in conds]).astype(model.dtype) for k in range(cfg.n_blocks + 1)]
    return x, cond, gt, tt


def batch_loss(model: YNet, batch: Sequence[TrainSample], weights: LossWeights, sigma_h: float = 4.0):
    check_batch(batch)
    x, cond, gt, tt = batch_arrays(model, batch, sigma_h)
    goal_maps, traj_maps = model.forward(x, cond, mode="train")
    return compute_loss(goal_maps, traj_maps, gt, tt, model.config.n_waypoints, weights)


# -- batching ----------------------------------------------------------------------

def check_batch(batch: Sequence[TrainSample]) -> None:
    scenes = sorted({s.scene_id for s in batch})
    if len(scenes) > 1:
        raise DataError(f"batch mixes scenes {scenes}; batches must be scene-homogeneous")
    if not batch:
        raise DataError("empty batch")


def scene_batches(samples: Sequence[TrainSample], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle within each scene, chunk into batches, then shuffle batch order."""
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.scene_id, []).append(i)
    batches = []
    for sid in sorted(groups):
        idx = np.asarray(groups[sid])
        idx = idx[rng.permutation(len(idx))]
        batches += [idx[k:k + batch_size].tolist() for k in range(0, len(idx), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[k] for k in order]


def split_train_val(items: Sequence, frac: float = 0.9, seed: int = 0) -> tuple[list, list]:
    """Seeded random split; at least one item lands in each part when possible."""
    n = len(items)
    perm = np.random.default_rng(seed).permutation(n)
    k = min(max(int(round(frac * n)), 1), n - 1) if n > 1 else n
    return [items[i] for i in sorted(perm[:k])], [items[i] for i in sorted(perm[k:])]


@dataclass
class FitResult:
    model: YNet
    curve: list[dict] = field(default_factory=list)

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["epoch", "L_goal", "L_wp", "L_traj", "total"], lineterminator="\n")
            w.writeheader()
            for row in self.curve:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def fit(
    samples: Sequence[TrainSample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: Optional[Path] = None,
    model: Optional[YNet] = None,
    on_epoch: Optional[Callable[[int, dict, YNet], bool]] = None,
) -> FitResult:
    """Train end to end with teacher forcing; deterministic given the seeds.

    ``on_epoch(epoch, row, model)`` may return True to stop early.
    """
    if not samples:
        raise DataError("fit: empty dataset")
    if tuple(model_config.waypoint_frames) != tuple(train_config.waypoint_frames) and train_config.waypoint_frames:
        raise ConfigError("train and model configs disagree on waypoint_frames")
    data = augment_all(samples) if train_config.augment else list(samples)
    model = model or YNet(model_config)
    rng = np.random.default_rng(train_config.seed)
    weights = train_config.weights
    result = FitResult(model)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    for epoch in range(1, train_config.epochs + 1):
        sums = {"L_goal": 0.0, "L_wp": 0.0, "L_traj": 0.0, "total": 0.0}
        batches = scene_batches(data, train_config.batch_size, rng)
        for b, idx in enumerate(batches):
            batch = [data[i] for i in idx]
            zero_grad(params)
            total, terms = batch_loss(model, batch, weights, train_config.sigma_h)
            if not np.isfinite(terms["total"]):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b} ({[s.key for s in batch]})")
            total.backward()
            adam_step(params, lr=train_config.lr)
            for k in sums:
                sums[k] += terms[k]
        row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()}}
        result.curve.append(row)
        log.info("epoch %d total %.4f", epoch, row["total"])
        if out_dir and train_config.checkpoint_every and epoch % train_config.checkpoint_every == 0:
            model.save(out_dir / f"epoch{epoch:05d}.ckpt")
        if on_epoch and on_epoch(epoch, row, model):
            break
    if out_dir:
        model.save(out_dir / "model.ckpt")
        result.write_curve(out_dir / "loss.csv")
        (out_dir / "train_config.json").write_text(json.dumps(train_config.to_dict(), indent=2, sort_keys=True))
    return result
