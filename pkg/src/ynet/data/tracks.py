"""Raw track ingestion and the long-horizon re-purposing procedure.

raw CSV -> per-agent tracks -> FPS downsampling -> split at temporal gaps ->
class/length filtering -> non-overlapping windows of ``n_p + n_f`` frames.
Every input position ends up either in exactly one window or in the discard
log with a reason.
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, DataError
from .geometry import world_to_pixel

POINT_COLUMNS = ("scene_id", "agent_id", "class", "frame", "x", "y")
BOX_COLUMNS = ("scene_id", "agent_id", "class", "frame", "xmin", "ymin", "xmax", "ymax")
PEDESTRIAN_CLASSES = frozenset({"pedestrian"})
DISCARD_REASONS = ("fps-downsample", "class-filter", "short-fragment", "discontinuity-boundary", "tail")


@dataclass
class RawTrack:
    scene_id: str
    agent_id: str
    agent_class: str
    frames: np.ndarray
    positions: np.ndarray
    fragment: int = 0
    was_split: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(self.frames) != len(self.positions):
            raise DataError(f"agent {self.agent_id}: {len(self.frames)} frames vs {len(self.positions)} positions")
        if np.any(np.diff(self.frames) <= 0):
            raise DataError(f"agent {self.agent_id}: frames are not strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise DataError(f"agent {self.agent_id}: non-finite positions")

    def __len__(self) -> int:
        return len(self.frames)

    def subset(self, mask_or_slice, **changes) -> "RawTrack":
        base = dict(scene_id=self.scene_id, agent_id=self.agent_id, agent_class=self.agent_class,
                    frames=self.frames[mask_or_slice], positions=self.positions[mask_or_slice],
                    fragment=self.fragment, was_split=self.was_split)
        base.update(changes)
        return RawTrack(**base)


@dataclass
class WindowedSample:
    scene_id: str
    agent_id: str
    window_index: int
    past: np.ndarray
    future: np.ndarray
    frames: Optional[np.ndarray] = None

    def to_record(self) -> dict:
        return {
            "scene": self.scene_id,
            "agent": self.agent_id,
            "window": self.window_index,
            "past": self.past.tolist(),
            "future": self.future.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "WindowedSample":
        return cls(str(rec["scene"]), str(rec["agent"]), int(rec["window"]),
                   np.asarray(rec["past"], dtype=np.float64), np.asarray(rec["future"], dtype=np.float64))

    @property
    def key(self) -> str:
        return f"{self.scene_id}/{self.agent_id}/{self.window_index}"


@dataclass(frozen=True)
class Discard:
    scene_id: str
    agent_id: str
    frame: int
    x: float
    y: float
    reason: str


def _discards(track: RawTrack, reason: str, mask=None) -> list[Discard]:
    idx = np.arange(len(track)) if mask is None else np.flatnonzero(mask)
    return [Discard(track.scene_id, track.agent_id, int(track.frames[i]),
                    float(track.positions[i, 0]), float(track.positions[i, 1]), reason) for i in idx]


def load_tracks(path) -> list[RawTrack]:
    """Read a track CSV (point or bounding-box rows) into frame-sorted tracks.

    Box rows are reduced to the box centre.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (no header)") from None
        if all(c in header for c in POINT_COLUMNS):
            boxes = False
        elif all(c in header for c in BOX_COLUMNS):
            boxes = True
        else:
            missing = [c for c in POINT_COLUMNS if c not in header]
            raise DataError(f"{path}: missing columns {missing}")
        col = {name: header.index(name) for name in header}
        rows: dict[tuple[str, str], list[tuple[int, float, float]]] = {}
        classes: dict[tuple[str, str], str] = {}
        bad: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                key = (row[col["scene_id"]].strip(), row[col["agent_id"]].strip())
                frame = int(row[col["frame"]])
                if boxes:
                    x = (float(row[col["xmin"]]) + float(row[col["xmax"]])) / 2.0
                    y = (float(row[col["ymin"]]) + float(row[col["ymax"]])) / 2.0
                else:
                    x, y = float(row[col["x"]]), float(row[col["y"]])
                if not (np.isfinite(x) and np.isfinite(y)):
                    raise ValueError
                label = row[col["class"]].strip()
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            rows.setdefault(key, []).append((frame, x, y))
            classes.setdefault(key, label)
        if bad:
            shown = ", ".join(map(str, bad[:20]))
            raise DataError(f"{path}: {len(bad)} malformed rows at lines {shown}")

    tracks = []
    for (scene_id, agent_id), recs in sorted(rows.items()):
        recs.sort(key=lambda r: r[0])
        frames = [r[0] for r in recs]
        dup = [f for f, n in Counter(frames).items() if n > 1]
        if dup:
            raise DataError(f"{path}: duplicate (agent {agent_id}, frame {dup[0]}) in scene {scene_id}")
        tracks.append(RawTrack(scene_id, agent_id, classes[(scene_id, agent_id)], frames,
                               [(r[1], r[2]) for r in recs]))
    return tracks


def write_tracks(tracks: Iterable[RawTrack], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINT_COLUMNS)
        for t in tracks:
            for f, (x, y) in zip(t.frames, t.positions):
                w.writerow([t.scene_id, t.agent_id, t.agent_class, int(f), repr(float(x)), repr(float(y))])


def frame_step(src_fps: float, dst_fps: float) -> int:
    ratio = src_fps / dst_fps
    if dst_fps <= 0 or src_fps <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError(f"source FPS {src_fps} is not an integer multiple of target FPS {dst_fps}")
    return int(round(ratio))


def downsample_fps(track: RawTrack, src_fps: float, dst_fps: float) -> RawTrack:
    """Keep the frames whose number is a multiple of ``src_fps / dst_fps``."""
    step = frame_step(src_fps, dst_fps)
    return track.subset(track.frames % step == 0)


def split_discontinuities(track: RawTrack, period: int = 1) -> list[RawTrack]:
    """Split wherever consecutive frames are more than ``period`` apart."""
    if len(track) == 0:
        return []
    cuts = np.flatnonzero(np.diff(track.frames) > period) + 1
    bounds = [0, *cuts.tolist(), len(track)]
    split = len(bounds) > 2
    return [track.subset(slice(a, b), fragment=k, was_split=split or track.was_split)
            for k, (a, b) in enumerate(zip(bounds, bounds[1:]))]


def filter_and_window(
    tracks: Sequence[RawTrack],
    n_p: int,
    n_f: int,
    pedestrian_only: bool = True,
    pedestrian_classes=PEDESTRIAN_CLASSES,
) -> tuple[list[WindowedSample], list[Discard]]:
    """Drop non-pedestrians and short fragments, tile the rest without overlap.

    Windows start at the first frame of each fragment; the tail that does not
    fill a whole window is discarded.
    """
    length = n_p + n_f
    windows: list[WindowedSample] = []
    discards: list[Discard] = []
    counters: Counter = Counter()
    for t in tracks:
        if pedestrian_only and t.agent_class.lower() not in pedestrian_classes:
            discards += _discards(t, "class-filter")
            continue
        if len(t) < length:
            discards += _discards(t, "discontinuity-boundary" if t.was_split else "short-fragment")
            continue
        n_win = len(t) // length
        for k in range(n_win):
            sl = slice(k * length, (k + 1) * length)
            key = (t.scene_id, t.agent_id)
            windows.append(WindowedSample(t.scene_id, t.agent_id, counters[key],
                                          t.positions[sl][:n_p].copy(), t.positions[sl][n_p:].copy(),
                                          t.frames[sl].copy()))
            counters[key] += 1
        tail = np.zeros(len(t), dtype=bool)
        tail[n_win * length:] = True
        discards += _discards(t, "tail", tail)
    return windows, discards


@dataclass
class PipelineConfig:
    n_p: int = 5
    n_f: int = 30
    src_fps: float = 30.0
    dst_fps: float = 1.0
    pedestrian_only: bool = True
    coords: str = "pixel"

    def __post_init__(self):
        if self.coords not in ("pixel", "world"):
            raise ConfigError(f"coords must be 'pixel' or 'world', got {self.coords!r}")
        frame_step(self.src_fps, self.dst_fps)


@dataclass
class PipelineResult:
    windows: list[WindowedSample]
    discards: list[Discard]
    n_tracks: int
    n_positions: int
    counts: dict = field(default_factory=dict)

    def summary(self) -> dict:
        by_reason = Counter(d.reason for d in self.discards)
        return {
            "tracks_in": self.n_tracks,
            "positions_in": self.n_positions,
            "windows_out": len(self.windows),
            "positions_windowed": int(sum(len(w.past) + len(w.future) for w in self.windows)),
            "discards": {r: by_reason.get(r, 0) for r in DISCARD_REASONS},
        }


def run_pipeline(tracks: Sequence[RawTrack], cfg: PipelineConfig, homographies: Optional[dict] = None) -> PipelineResult:
    """Apply the full re-purposing procedure to already-loaded tracks."""
    step = frame_step(cfg.src_fps, cfg.dst_fps)
    discards: list[Discard] = []
    fragments: list[RawTrack] = []
    for t in tracks:
        if cfg.coords == "world":
            h = (homographies or {}).get(t.scene_id)
            if h is None:
                raise ConfigError(f"world coordinates need a homography for scene {t.scene_id}")
            t = t.subset(slice(None), positions=world_to_pixel(t.positions, h))
        keep = t.frames % step == 0
        discards += _discards(t, "fps-downsample", ~keep)
        fragments += split_discontinuities(t.subset(keep), period=step)
    windows, more = filter_and_window(fragments, cfg.n_p, cfg.n_f, cfg.pedestrian_only)
    discards += more
    discards.sort(key=lambda d: (d.scene_id, d.agent_id, d.frame))
    return PipelineResult(windows, discards, len(tracks), int(sum(len(t) for t in tracks)))


def write_windows(windows: Iterable[WindowedSample], path) -> None:
    with open(path, "w") as fh:
        for w in windows:
            fh.write(json.dumps(w.to_record(), separators=(",", ":")) + "\n")


def read_windows(path) -> list[WindowedSample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(WindowedSample.from_record(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad window record ({exc})") from None
    return out


def write_discards(discards: Iterable[Discard], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene_id", "agent_id", "frame", "x", "y", "reason"])
        for d in discards:
            w.writerow([d.scene_id, d.agent_id, d.frame, repr(d.x), repr(d.y), d.reason])
