"""Full inference: goals by TTST, waypoints by CWS, paths by the trajectory decoder."""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DataError
from .heatmaps import encode_conditioning
from .model import YNet
from .sampling import categorical_topk, child_rng, cws, trajectory_from_maps, ttst
from .training import TrainSample

DECODE_CHUNK = 8


@dataclass
class SampleBudget:
    k_e: int = 20
    k_a: int = 1
    n_mc: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.k_e < 1 or self.k_a < 1:
            raise ConfigError(f"K_e and K_a must be >= 1, got {self.k_e}, {self.k_a}")
        if self.n_mc < self.k_e:
            raise ConfigError(f"n_mc={self.n_mc} must be >= K_e={self.k_e}")


@dataclass
class PredictionSet:
    """``paths[g, a]`` is the path for goal hypothesis ``g`` and waypoint draw ``a``."""

    scene: str
    agent: str
    goals: np.ndarray
    waypoints: np.ndarray
    paths: np.ndarray
    waypoint_frames: tuple[int, ...] = ()

    @property
    def k_e(self) -> int:
        return self.paths.shape[0]

    @property
    def k_a(self) -> int:
        return self.paths.shape[1]

    def scaled(self, factor: float) -> "PredictionSet":
        return PredictionSet(self.scene, self.agent, self.goals * factor, self.waypoints * factor,
                             self.paths * factor, self.waypoint_frames)

    def records(self) -> list[dict]:
        out = []
        for g in range(self.k_e):
            for a in range(self.k_a):
                out.append({
                    "scene": self.scene,
                    "agent": self.agent,
                    "goal_index": g,
                    "path_index": a,
                    "points": self.paths[g, a].tolist(),
                    "conditioning": {
                        "goal": self.goals[g].tolist(),
                        "waypoints": self.waypoints[g, a].tolist(),
                    },
                })
        return out


def write_predictions(sets: Sequence[PredictionSet], path) -> None:
    with open(path, "w") as fh:
        for ps in sets:
            for rec in ps.records():
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_predictions(path) -> list[PredictionSet]:
    grouped: dict[tuple[str, str], list[dict]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                grouped.setdefault((str(rec["scene"]), str(rec["agent"])), []).append(rec)
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    sets = []
    for (scene, agent), recs in grouped.items():
        k_e = 1 + max(r["goal_index"] for r in recs)
        k_a = 1 + max(r["path_index"] for r in recs)
        if len(recs) != k_e * k_a:
            raise DataError(f"agent {agent}: incomplete hypothesis grid ({len(recs)} of {k_e}x{k_a})")
        first = np.asarray(recs[0]["points"], dtype=np.float64)
        n_w = len(recs[0]["conditioning"]["waypoints"])
        paths = np.zeros((k_e, k_a) + first.shape)
        goals = np.zeros((k_e, 2))
        wps = np.zeros((k_e, k_a, n_w, 2))
        for r in recs:
            g, a = r["goal_index"], r["path_index"]
            paths[g, a] = r["points"]
            goals[g] = r["conditioning"]["goal"]
            wps[g, a] = np.asarray(r["conditioning"]["waypoints"], dtype=np.float64).reshape(n_w, 2)
        sets.append(PredictionSet(scene, agent, goals, wps, paths))
    return sets


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("YNET_THREADS", "1")))
    except ValueError:
        raise ConfigError("YNET_THREADS must be an integer") from None


class Predictor:
    """Runs the sampling stack on a trained model.

    ``use_ttst=False`` replaces TTST with plain categorical draws;
    ``use_cws=False`` samples waypoints from the unconditioned maps.
    """

    def __init__(
        self,
        model: YNet,
        budget: SampleBudget,
        use_ttst: bool = True,
        use_cws: bool = True,
        sigma_h: float = 4.0,
        alpha: float = 6.0,
        beta: float = 0.5,
    ):
        self.model = model
        self.budget = budget
        self.use_ttst = use_ttst
        self.use_cws = use_cws
        self.sigma_h = sigma_h
        self.alpha = alpha
        self.beta = beta

    def goal_maps(self, sample: TrainSample):
        pyramid = self.model.encode(sample.input)
        maps = self.model.decode_goal(pyramid, mode="infer").data[0].astype(np.float64)
        return pyramid, maps

    def predict_sample(self, sample: TrainSample, index: int = 0) -> PredictionSet:
        cfg = self.model.config
        b = self.budget
        pyramid, maps = self.goal_maps(sample)
        goal_map = maps[-1]
        wp_maps = maps[:-1]
        last_obs = sample.past[-1]

        goal_rng = child_rng(b.seed, index)
        if self.use_ttst:
            goals = ttst(goal_map, b.k_e, b.n_mc, goal_rng)
        else:
            goals = categorical_topk(goal_map, b.k_e, goal_rng)

        wps = np.zeros((b.k_e, b.k_a, cfg.n_waypoints, 2))
        for g in range(b.k_e):
            wps[g] = cws(wp_maps, goals[g], last_obs, cfg.n_p, cfg.n_f, cfg.waypoint_frames, b.k_a,
                         child_rng(b.seed, index, g + 1), self.alpha, self.beta,
                         conditioned=self.use_cws, on_disjoint="prior")

        h, w = sample.shape
        goals_c = np.clip(goals, 0, [w - 1, h - 1])
        wps_c = np.clip(wps, 0, [w - 1, h - 1])
        conds = [encode_conditioning(goals_c[g], wps_c[g, a], (h, w), cfg.n_blocks, self.sigma_h)
                 for g in range(b.k_e) for a in range(b.k_a)]
        logits = self._decode_chunks(pyramid, conds)

        idx = [cfg.future_index(f) for f in cfg.waypoint_frames]
        paths = np.zeros((b.k_e, b.k_a, cfg.n_f, 2))
        for n, (g, a) in enumerate((g, a) for g in range(b.k_e) for a in range(b.k_a)):
            fixed = {i: wps[g, a, j] for j, i in enumerate(idx)}
            fixed[cfg.n_f - 1] = goals[g]
            paths[g, a] = trajectory_from_maps(logits[n], fixed, logits=True)
        agent_id = sample.key or str(index)
        return PredictionSet(sample.scene_id, agent_id, goals, wps, paths, tuple(cfg.waypoint_frames))

    def _decode_chunks(self, pyramid, conds: list) -> np.ndarray:
        # Fixed, zero-padded chunks keep every matmul the same shape, so a
        # hypothesis decodes bit-identically whatever K_e x K_a is.
        n_levels = len(conds[0])
        tiled = pyramid.repeat(DECODE_CHUNK)
        out = []
        for start in range(0, len(conds), DECODE_CHUNK):
            part = conds[start : start + DECODE_CHUNK]
            stacked = []
            for k in range(n_levels):
                block = np.zeros((DECODE_CHUNK,) + part[0][k].shape, dtype=self.model.dtype)
                block[: len(part)] = [c[k] for c in part]
                stacked.append(Tensor(block))
            out.append(self.model.trajectory_logits(tiled, stacked).data[: len(part)])
        return np.concatenate(out)

    def predict(self, samples: Sequence[TrainSample]) -> list[PredictionSet]:
        workers = min(thread_count(), max(1, len(samples)))
        if workers == 1:
            return [self.predict_sample(s, i) for i, s in enumerate(samples)]
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda args: self.predict_sample(*args), [(s, i) for i, s in enumerate(samples)]))
