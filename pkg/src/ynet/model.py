"""Encoder, goal/waypoint decoder and trajectory decoder.

Block layout (3x3 convs, padding 1, ReLU):

* encoder block k: conv, conv -> skip_k (pre-pool) -> maxpool2
* decoder centre: two convs at the deepest resolution
* decoder block k: bilinear_upsample2 -> conv -> concat(skip, [conditioning]) -> conv, conv
* head: 1x1 conv producing logits
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    bilinear_upsample2,
    concat_channels,
    conv2d,
    maxpool2,
    relu,
    scale,
    sigmoid,
    slice_channels,
)
from .autodiff.checkpoint import load_into, save_checkpoint
from .errors import ConfigError, ShapeError


@dataclass
class ModelConfig:
    n_p: int = 8
    n_f: int = 12
    n_classes: int = 5
    waypoint_frames: tuple[int, ...] = ()
    encoder_channels: tuple[int, ...] = (32, 32, 64, 64, 64)
    decoder_channels: Optional[tuple[int, ...]] = None
    center_channels: int = 128
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.waypoint_frames = tuple(int(w) for w in self.waypoint_frames)
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if self.decoder_channels is None:
            self.decoder_channels = tuple(reversed(self.encoder_channels))
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.validate()

    def validate(self) -> None:
        if self.n_p < 1 or self.n_f < 1:
            raise ConfigError("n_p and n_f must be positive")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be positive")
        wf = self.waypoint_frames
        if any(b <= a for a, b in zip(wf, wf[1:])):
            raise ConfigError(f"waypoint_frames must be strictly increasing, got {wf}")
        if wf and not (wf[0] > self.n_p and wf[-1] < self.n_p + self.n_f):
            raise ConfigError(f"waypoint_frames must lie in ({self.n_p}, {self.n_p + self.n_f}), got {wf}")
        if not self.encoder_channels:
            raise ConfigError("encoder_channels must not be empty")
        if len(self.decoder_channels) != len(self.encoder_channels):
            raise ConfigError("decoder_channels must mirror encoder_channels in length")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")

    @property
    def n_waypoints(self) -> int:
        return len(self.waypoint_frames)

    @property
    def n_blocks(self) -> int:
        return len(self.encoder_channels)

    @property
    def in_channels(self) -> int:
        return self.n_classes + self.n_p

    @property
    def divisor(self) -> int:
        return 2 ** self.n_blocks

    def future_index(self, frame: int) -> int:
        """0-based position of absolute frame ``frame`` (1-based timeline) in the future array."""
        return frame - self.n_p - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("waypoint_frames", "encoder_channels", "decoder_channels"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FeaturePyramid:
    """Pre-pool encoder features (full resolution first) plus the deepest pooled map."""

    skips: list[Tensor]
    deepest: Tensor
    scales: list[int] = field(default_factory=list)

    @property
    def levels(self) -> list[Tensor]:
        return self.skips + [self.deepest]

    def repeat(self, n: int) -> "FeaturePyramid":
        """Tile a single-sample pyramid ``n`` times along the batch axis (no gradient)."""
        tile = lambda t: Tensor(np.repeat(t.data, n, axis=0))
        return FeaturePyramid([tile(s) for s in self.skips], tile(self.deepest), list(self.scales))


class YNet:
    """Parameters and forward passes of the three sub-networks."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self._rng = np.random.default_rng(config.seed)
        self._build()

    # -- construction -------------------------------------------------------------
    def _conv(self, name: str, c_in: int, c_out: int, k: int = 3) -> None:
        fan_in = c_in * k * k
        bound = np.sqrt(6.0 / fan_in)
        w = self._rng.uniform(-bound, bound, (c_out, c_in, k, k))
        self.params[f"{name}.weight"] = Parameter(w.astype(self.dtype))
        self.params[f"{name}.bias"] = Parameter(np.zeros(c_out, dtype=self.dtype))

    def _build_decoder(self, prefix: str, cond: int, out: int) -> None:
        cfg = self.config
        enc = cfg.encoder_channels
        self._conv(f"{prefix}.center.0", enc[-1] + cond, cfg.center_channels)
        self._conv(f"{prefix}.center.1", cfg.center_channels, cfg.center_channels)
        prev = cfg.center_channels
        for k, ch in enumerate(cfg.decoder_channels):
            skip = enc[cfg.n_blocks - 1 - k]
            self._conv(f"{prefix}.up{k}.up", prev, ch)
            self._conv(f"{prefix}.up{k}.conv0", ch + skip + cond, ch)
            self._conv(f"{prefix}.up{k}.conv1", ch, ch)
            prev = ch
        self._conv(f"{prefix}.head", prev, out, k=1)

    def _build(self) -> None:
        cfg = self.config
        c_in = cfg.in_channels
        for k, ch in enumerate(cfg.encoder_channels):
            self._conv(f"enc{k}.conv0", c_in, ch)
            self._conv(f"enc{k}.conv1", ch, ch)
            c_in = ch
        n_cond = cfg.n_waypoints + 1
        self._build_decoder("goal", 0, n_cond + cfg.n_f)
        self._build_decoder("traj", n_cond, cfg.n_f)

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    # -- layers -------------------------------------------------------------------
    def _apply(self, name: str, x: Tensor, activate: bool = True) -> Tensor:
        w = self.params[f"{name}.weight"]
        out = conv2d(x, w, self.params[f"{name}.bias"], padding=w.shape[-1] // 2)
        return relu(out) if activate else out

    def _input(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if t.ndim == 3:
            t = Tensor(t.data[None])
        return t

    # -- sub-networks -------------------------------------------------------------
    def encode(self, x) -> FeaturePyramid:
        x = self._input(x)
        cfg = self.config
        if x.shape[1] != cfg.in_channels:
            raise ShapeError(f"encoder expects {cfg.in_channels} input channels, got shape {x.shape}")
        h, w = x.shape[-2:]
        if h % cfg.divisor or w % cfg.divisor:
            raise ShapeError(f"spatial extents {h}x{w} must be divisible by {cfg.divisor}")
        skips, scales = [], []
        for k in range(cfg.n_blocks):
            x = self._apply(f"enc{k}.conv0", x)
            x = self._apply(f"enc{k}.conv1", x)
            skips.append(x)
            scales.append(2 ** k)
            x = maxpool2(x)
        return FeaturePyramid(skips, x, scales + [cfg.divisor])

    def _decode(self, prefix: str, pyramid: FeaturePyramid, cond: Optional[list[Tensor]]) -> Tensor:
        cfg = self.config
        if len(pyramid.skips) != cfg.n_blocks:
            raise ShapeError(f"pyramid has {len(pyramid.skips)} skip levels, config expects {cfg.n_blocks}")
        x = pyramid.deepest
        if cond is not None:
            x = concat_channels(x, cond[cfg.n_blocks])
        x = self._apply(f"{prefix}.center.0", x)
        x = self._apply(f"{prefix}.center.1", x)
        for k in range(cfg.n_blocks):
            level = cfg.n_blocks - 1 - k
            x = self._apply(f"{prefix}.up{k}.up", bilinear_upsample2(x))
            parts = [x, pyramid.skips[level]]
            if cond is not None:
                parts.append(cond[level])
            x = self._apply(f"{prefix}.up{k}.conv0", concat_channels(*parts))
            x = self._apply(f"{prefix}.up{k}.conv1", x)
        return self._apply(f"{prefix}.head", x, activate=False)

    def goal_logits(self, pyramid: FeaturePyramid) -> Tensor:
        """All goal-decoder logits: N_w waypoints, goal, then n_f auxiliary steps."""
        return self._decode("goal", pyramid, None)

    def decode_goal(self, pyramid: FeaturePyramid, mode: str = "infer") -> Tensor:
        """Waypoint and goal probability maps, earliest waypoint first and goal last.

        ``train`` mode appends the n_f auxiliary per-step maps. ``infer`` mode
        divides the logits by the configured temperature before the sigmoid.
        """
        logits = self.goal_logits(pyramid)
        n_cond = self.config.n_waypoints + 1
        if mode == "train":
            return sigmoid(logits)
        if mode != "infer":
            raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
        logits = slice_channels(logits, 0, n_cond)
        if self.config.temperature != 1.0:
            logits = scale(logits, 1.0 / self.config.temperature)
        return sigmoid(logits)

    def _conditioning(self, pyramid: FeaturePyramid, conditioning) -> list[Tensor]:
        cfg = self.config
        if len(conditioning) != cfg.n_blocks + 1:
            raise ShapeError(
                f"conditioning needs {cfg.n_blocks + 1} resolutions, got {len(conditioning)}"
            )
        n = pyramid.deepest.shape[0]
        out = []
        for level, c in enumerate(conditioning):
            t = c if isinstance(c, Tensor) else Tensor(np.asarray(c, dtype=self.dtype))
            if t.ndim == 3:
                t = Tensor(np.broadcast_to(t.data, (n,) + t.shape).copy())
            ref = pyramid.levels[level]
            if t.shape[0] != n or t.shape[-2:] != ref.shape[-2:] or t.shape[1] != cfg.n_waypoints + 1:
                raise ShapeError(f"conditioning level {level} has shape {t.shape}, expected "
                                 f"({n}, {cfg.n_waypoints + 1}) x {ref.shape[-2:]}")
            out.append(t)
        return out

    def trajectory_logits(self, pyramid: FeaturePyramid, conditioning) -> Tensor:
        return self._decode("traj", pyramid, self._conditioning(pyramid, conditioning))

    def decode_trajectory(self, pyramid: FeaturePyramid, conditioning) -> Tensor:
        """n_f per-step probability maps given goal/waypoint conditioning heatmaps.

        ``conditioning[k]`` has extent ``H / 2**k`` for ``k = 0 .. n_blocks``.
        """
        return sigmoid(self.trajectory_logits(pyramid, conditioning))

    def forward(self, x, conditioning, mode: str = "train") -> tuple[Tensor, Tensor]:
        pyramid = self.encode(x)
        return self.decode_goal(pyramid, mode), self.decode_trajectory(pyramid, conditioning)

    # -- persistence --------------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        save_checkpoint(path, self.params)
        self.config.save(path.with_suffix(".json"))

    @classmethod
    def load(cls, path, dtype=np.float32) -> "YNet":
        path = Path(path)
        cfg_path = path.with_suffix(".json")
        if not cfg_path.exists():
            raise ConfigError(f"missing model config {cfg_path}")
        model = cls(ModelConfig.load(cfg_path), dtype=dtype)
        load_into(path, model.params)
        return model
