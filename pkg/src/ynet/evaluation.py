"""Displacement metrics and min-of-K evaluation over goal x path hypotheses."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ShapeError


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[-1] != 2:
        raise ShapeError(f"trajectory shapes differ or are not (n, 2): {p.shape} vs {g.shape}")
    if len(p) == 0:
        raise ShapeError("empty trajectory")
    return p, g


def ade(pred, gt) -> float:
    """Mean Euclidean distance over all timesteps."""
    p, g = _pair(pred, gt)
    return float(np.mean(np.hypot(*(p - g).T)))


def fde(pred, gt) -> float:
    """Euclidean distance at the final timestep."""
    p, g = _pair(pred, gt)
    return float(np.hypot(*(p[-1] - g[-1])))


def constant_velocity_baseline(past, n_f: int) -> np.ndarray:
    """Extrapolate the last observed displacement ``n_f`` steps ahead."""
    past = np.asarray(past, dtype=np.float64)
    if len(past) < 2:
        raise ShapeError(f"constant velocity needs at least 2 past points, got {len(past)}")
    v = past[-1] - past[-2]
    return past[-1] + np.arange(1, n_f + 1)[:, None] * v


@dataclass
class EvalRecord:
    """One agent's ground truth and its ``(K_e, K_a, n_f, 2)`` hypothesis grid."""

    agent: str
    gt: np.ndarray
    predictions: np.ndarray
    units: str = "pixels"
    ades: np.ndarray = field(init=False)
    fdes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gt = np.asarray(self.gt, dtype=np.float64)
        pred = np.asarray(self.predictions, dtype=np.float64)
        if pred.ndim == 3:
            pred = pred[:, None]
        if pred.ndim != 4 or pred.shape[2:] != self.gt.shape:
            raise ShapeError(f"agent {self.agent}: predictions {pred.shape} do not match gt {self.gt.shape}")
        self.predictions = pred
        err = np.hypot(*np.moveaxis(pred - self.gt, -1, 0))  # (K_e, K_a, n_f)
        self.ades = err.mean(axis=-1)
        self.fdes = err[..., -1]

    @property
    def k(self) -> int:
        return int(self.ades.size)

    @property
    def min_ade(self) -> float:
        return float(self.ades.min())

    @property
    def min_fde(self) -> float:
        return float(self.fdes.min())

    @property
    def best_ade_index(self) -> tuple[int, int]:
        # argmin returns the first (lowest flat index) minimum
        return tuple(int(v) for v in np.unravel_index(self.ades.argmin(), self.ades.shape))

    @property
    def best_fde_index(self) -> tuple[int, int]:
        return tuple(int(v) for v in np.unravel_index(self.fdes.argmin(), self.fdes.shape))

    @property
    def per_goal_fde(self) -> np.ndarray:
        """Best FDE per goal hypothesis; paths sharing a goal share their endpoint."""
        return self.fdes.min(axis=1)


@dataclass
class Summary:
    dataset: str
    n_agents: int
    k_e: int
    k_a: int
    min_ade: float
    min_fde: float
    units: str
    records: list[EvalRecord] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "n_agents": self.n_agents,
            "K_e": self.k_e,
            "K_a": self.k_a,
            "min_ade": self.min_ade,
            "min_fde": self.min_fde,
            "units": self.units,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_agent_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["agent", "min_ade", "min_fde", "best_ade_goal", "best_ade_path", "best_fde_goal"])
            for r in self.records:
                g, p = r.best_ade_index
                w.writerow([r.agent, repr(r.min_ade), repr(r.min_fde), g, p, r.best_fde_index[0]])


SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["dataset", "n_agents", "K_e", "K_a", "min_ade", "min_fde", "units"],
    "properties": {
        "dataset": {"type": "string"},
        "n_agents": {"type": "integer", "minimum": 1},
        "K_e": {"type": "integer", "minimum": 1},
        "K_a": {"type": "integer", "minimum": 1},
        "min_ade": {"type": "number", "minimum": 0},
        "min_fde": {"type": "number", "minimum": 0},
        "units": {"enum": ["pixels", "meters"]},
    },
    "additionalProperties": False,
}


def evaluate_min_of_k(records: Sequence[EvalRecord], dataset: str = "dataset") -> Summary:
    """Per agent min over all hypotheses (ADE and FDE independently), then mean over agents."""
    if not records:
        raise DataError("evaluate_min_of_k: no records")
    shapes = {r.ades.shape for r in records}
    units = {r.units for r in records}
    if len(units) != 1:
        raise DataError(f"mixed units in evaluation: {sorted(units)}")
    k_e, k_a = records[0].ades.shape if len(shapes) == 1 else (max(s[0] for s in shapes), max(s[1] for s in shapes))
    return Summary(
        dataset,
        len(records),
        int(k_e),
        int(k_a),
        float(np.mean([r.min_ade for r in records])),
        float(np.mean([r.min_fde for r in records])),
        units.pop(),
        list(records),
    )


def to_eval_frame(points, downsample_factor: float = 1.0, homography: Optional[np.ndarray] = None) -> np.ndarray:
    """Working pixels -> original pixels, then to meters when a homography is given."""
    from .data.geometry import pixel_to_world, upscale_coords

    pts = upscale_coords(points, downsample_factor)
    return pixel_to_world(pts, homography) if homography is not None else pts
