"""Synthetic scenes with class-compliant walkers, a desk-scale stand-in for drone footage."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..scene import DRONE_CLASSES, Scene
from .tracks import RawTrack

PAVEMENT, TERRAIN, STRUCTURE, TREE, ROAD = range(5)
WALKABLE = (PAVEMENT, TERRAIN)
KINDS = ("corridor", "fork", "crossing")


@dataclass
class SynthScene:
    scene: Scene
    tracks: list[RawTrack]
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    routes: dict[str, np.ndarray] = field(default_factory=dict)
    half_width: float = 0.0

    def walkable(self) -> np.ndarray:
        return np.isin(self.scene.semantic, WALKABLE)


def _segment_distance(xx, yy, a, b) -> np.ndarray:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ab = b - a
    t = ((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / float(ab @ ab)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(xx - (a[0] + t * ab[0]), yy - (a[1] + t * ab[1]))


def _polyline_distance(xx, yy, pts) -> np.ndarray:
    return np.min([_segment_distance(xx, yy, a, b) for a, b in zip(pts, pts[1:])], axis=0)


def _routes(kind: str, size: int) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Walkable centre-lines (``corridors``) and the start-to-end ``routes`` agents follow."""
    s = size - 1
    mid = s / 2
    if kind == "corridor":
        line = np.array([[0.0, mid], [s, mid]])
        return {"main": line}, {"east": line, "west": line[::-1].copy()}
    if kind == "fork":
        j = np.array([0.45 * s, mid])
        stem = np.array([[0.0, mid], j])
        ends = {"upper": [0.75 * s, 0.0], "middle": [s, mid], "bottom": [0.75 * s, s]}
        branches = {k: np.array([j, e]) for k, e in ends.items()}
        corridors = {"stem": stem, **branches}
        routes = {k: np.vstack([stem[:1], b]) for k, b in branches.items()}
        return corridors, routes
    if kind == "crossing":
        h = np.array([[0.0, mid], [s, mid]])
        v = np.array([[mid, 0.0], [mid, s]])
        c = np.array([mid, mid])
        arms = {"west": [0.0, mid], "east": [s, mid], "north": [mid, 0.0], "south": [mid, s]}
        routes = {}
        for a, pa in arms.items():
            for b, pb in arms.items():
                if a != b:
                    routes[f"{a}-{b}"] = np.array([pa, c, pb])
        return {"horizontal": h, "vertical": v}, routes
    raise ConfigError(f"unknown synthetic scene kind {kind!r}; choose from {KINDS}")


def _walk(route: np.ndarray, n_frames: int, rng: np.random.Generator, max_offset: float) -> np.ndarray:
    seg = np.diff(route, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    total = cum[-1]
    start = rng.uniform(0.0, 0.08) * total
    end = total - rng.uniform(0.0, 0.05) * total
    s = np.linspace(start, end, n_frames)
    offset = rng.uniform(-0.5, 0.5) * max_offset
    jitter = rng.uniform(-0.15, 0.15, n_frames) * max_offset
    pts = np.empty((n_frames, 2))
    for k, sk in enumerate(s):
        i = min(int(np.searchsorted(cum, sk, side="right")) - 1, len(seg) - 1)
        u = seg[i] / lens[i]
        normal = np.array([-u[1], u[0]])
        pts[k] = route[i] + (sk - cum[i]) * u + (offset + jitter[k]) * normal
    return pts


def synth_scene(
    kind: str = "fork",
    size: int = 32,
    seed: int = 0,
    n_agents: int = 20,
    track_length: int = 15,
    scene_id: str | None = None,
    agent_class: str = "Pedestrian",
) -> SynthScene:
    """Generate a ``size x size`` scene with ``n_agents`` walkers of ``track_length`` frames.

    Corridors are pavement on a structure/tree background. Walkers follow a
    randomly chosen route end to end with a seeded lateral offset, so every
    position rounds onto a walkable pixel. Fork scenes expose one disjoint
    mask per branch (``upper``, ``middle``, ``bottom``).
    """
    if size % 32:
        raise ConfigError(f"synthetic scene size must be divisible by 32, got {size}")
    if kind not in KINDS:
        raise ConfigError(f"unknown synthetic scene kind {kind!r}; choose from {KINDS}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    corridors, routes = _routes(kind, size)
    half_width = max(2.5, 0.08 * size)

    sem = np.full((size, size), STRUCTURE, dtype=np.uint8)
    sem[rng.random((size, size)) < 0.15] = TREE
    dists = {name: _polyline_distance(xx, yy, line) for name, line in corridors.items()}
    on_path = np.min(list(dists.values()), axis=0) <= half_width
    sem[on_path] = PAVEMENT
    if kind == "crossing":
        verge = (np.min(list(dists.values()), axis=0) <= half_width + 1.5) & ~on_path
        sem[verge] = TERRAIN

    masks: dict[str, np.ndarray] = {}
    if kind == "fork":
        names = ("upper", "middle", "bottom")
        stack = np.stack([dists[n] for n in names])
        nearest = stack.argmin(axis=0)
        junction = corridors["stem"][1]
        clear = np.hypot(xx - junction[0], yy - junction[1]) > 2.0 * half_width
        for k, n in enumerate(names):
            masks[n] = (nearest == k) & (dists[n] <= half_width) & clear & (xx > junction[0])

    sid = scene_id or f"{kind}_{seed}"
    scene = Scene(sem, DRONE_CLASSES, 1.0, None, sid)
    route_names = sorted(routes)
    tracks = []
    for a in range(n_agents):
        name = route_names[int(rng.integers(len(route_names)))]
        pts = _walk(routes[name], track_length, rng, max_offset=0.5 * half_width)
        first = int(rng.integers(0, 1000))
        tracks.append(RawTrack(sid, f"{a:04d}", agent_class, np.arange(first, first + track_length), pts))
    return SynthScene(scene, tracks, masks, routes, half_width)
