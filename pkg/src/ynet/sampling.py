"""Turning probability maps into goal, waypoint and path hypotheses.

Maps are ``(H, W)`` arrays indexed ``[row, col]``; every returned point is
``(x, y) = (col, row)``. Randomness always comes from an explicit
``numpy.random.Generator`` (or a seed that builds one).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError

REL_THRESHOLD = 0.01
LOGIT_EPS = 1e-12
DISJOINT_MAHALANOBIS = 6.0


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent stream for one branch (agent, goal, ...) of a seeded run."""
    return np.random.default_rng([int(seed), *(int(p) for p in path)])


def _grid(map_) -> np.ndarray:
    x = np.asarray(map_, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (H, W) map, got shape {x.shape}")
    return x


def softargmax(map_) -> np.ndarray:
    """Softmax-weighted mean of the grid coordinates, treating entries as logits.

    Row and column marginals of ``exp(X)`` weight the row index ``i`` and the
    column index ``j``; the result is returned as ``(x, y) = (j, i)``.
    """
    x = _grid(map_)
    if not np.all(np.isfinite(x)):
        raise NumericalError("softargmax of a map with non-finite entries")
    e = np.exp(x - x.max())
    total = e.sum()
    rows = e.sum(axis=1) / total
    cols = e.sum(axis=0) / total
    i = float(np.dot(np.arange(x.shape[0]), rows))
    j = float(np.dot(np.arange(x.shape[1]), cols))
    return np.array([j, i])


def log_odds(prob_map, eps: float = LOGIT_EPS) -> np.ndarray:
    """``log(p / (1 - p))`` with ``p`` clamped to ``[eps, 1 - eps]``.

    ``softargmax(log_odds(P))`` weights pixels by ``P / (1 - P)``, so on a
    probability map it lands on the mass rather than on the grid centre.
    """
    p = np.clip(_grid(prob_map), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def point_estimate(prob_map) -> np.ndarray:
    return softargmax(log_odds(prob_map))


def relative_threshold(prob_map, factor: float = REL_THRESHOLD) -> np.ndarray:
    """Zero every entry below ``factor * max``; others are returned unchanged."""
    x = _grid(prob_map)
    peak = x.max()
    if not peak > 0:
        raise NumericalError("relative_threshold of a map without positive mass")
    return np.where(x < factor * peak, 0.0, x)


def categorical_sample(prob_map, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. pixel draws with replacement, ``P(i, j)`` proportional to the map."""
    x = _grid(prob_map)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise NumericalError("categorical_sample needs a finite non-negative map")
    total = x.sum()
    if not total > 0:
        raise NumericalError("categorical_sample of a zero-mass map")
    rng = as_rng(seed)
    flat = rng.choice(x.size, size=n, replace=True, p=(x / total).ravel())
    rows, cols = np.divmod(flat, x.shape[1])
    return np.stack([cols, rows], axis=1).astype(np.float64)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    objective_history: list[float]
    n_iter: int


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def kmeans(points, k: int, seed, max_iter: int = 50) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when no assignment changes or after ``max_iter`` updates. An empty
    cluster is re-seeded at the point farthest from its current centre.
    """
    pts = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ConfigError(f"kmeans needs k >= 1, got {k}")
    if len(pts) < k:
        raise ConfigError(f"kmeans needs at least k={k} points, got {len(pts)}")
    rng = as_rng(seed)

    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[rng.integers(len(pts))]
    closest = ((pts - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(len(pts), p=closest / total)
        else:
            idx = rng.integers(len(pts))
        centers[c] = pts[idx]
        closest = np.minimum(closest, ((pts - centers[c]) ** 2).sum(axis=1))

    labels = _sq_dists(pts, centers).argmin(axis=1)
    history = [float(_sq_dists(pts, centers)[np.arange(len(pts)), labels].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = pts[members].mean(axis=0)
        d = _sq_dists(pts, centers)
        new_labels = d.argmin(axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                far = int(d[np.arange(len(pts)), new_labels].argmax())
                centers[c] = pts[far]
                d = _sq_dists(pts, centers)
                new_labels = d.argmin(axis=1)
        history.append(float(d[np.arange(len(pts)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(centers, labels, history, n_iter)


def ttst(prob_map, k_e: int, n_mc: int = 10_000, seed=0) -> np.ndarray:
    """Test-time sampling of ``k_e`` goal hypotheses from one probability map.

    Row 0 is the point estimate of the thresholded map; the remaining
    ``k_e - 1`` rows are K-means centres of ``n_mc`` categorical draws from it.
    The map is expected to already carry any temperature scaling.
    """
    if k_e < 1:
        raise ConfigError(f"ttst needs K_e >= 1, got {k_e}")
    if n_mc < k_e:
        raise ConfigError(f"n_mc={n_mc} must be at least K_e={k_e}")
    rng = as_rng(seed)
    thr = relative_threshold(prob_map)
    first = point_estimate(thr)
    if k_e == 1:
        return first[None]
    draws = categorical_sample(thr, n_mc, rng)
    centers = kmeans(draws, k_e - 1, rng).centers
    return np.vstack([first[None], centers])


def categorical_topk(prob_map, k: int, seed=0) -> np.ndarray:
    """Plain sampling baseline: ``k`` categorical draws, no threshold or clustering."""
    return categorical_sample(prob_map, k, seed)


@dataclass
class WaypointPrior:
    """Anisotropic Gaussian aligned with the last-observation -> anchor segment.

    ``sigma_par`` is the standard deviation along the segment, ``sigma_perp``
    across it. ``direction`` is the unit segment vector, or ``None`` for the
    isotropic fallback used when the segment has zero length.
    """

    mean: np.ndarray
    sigma_perp: float
    sigma_par: float
    direction: Optional[np.ndarray]

    @property
    def covariance(self) -> np.ndarray:
        if self.direction is None:
            return np.eye(2) * self.sigma_perp ** 2
        u = self.direction
        n = np.array([-u[1], u[0]])
        return self.sigma_par ** 2 * np.outer(u, u) + self.sigma_perp ** 2 * np.outer(n, n)

    def mahalanobis_sq(self, shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        dx = xx - self.mean[0]
        dy = yy - self.mean[1]
        if self.direction is None:
            return (dx * dx + dy * dy) / self.sigma_perp ** 2
        u = self.direction
        along = dx * u[0] + dy * u[1]
        across = -dx * u[1] + dy * u[0]
        return (along / self.sigma_par) ** 2 + (across / self.sigma_perp) ** 2

    def density(self, shape: tuple[int, int]) -> np.ndarray:
        """Unnormalised density, 1 at the mean."""
        return np.exp(-0.5 * self.mahalanobis_sq(shape))


def waypoint_prior(last_obs, anchor, fraction: float, alpha: float = 6.0, beta: float = 0.5) -> WaypointPrior:
    """Prior centred ``fraction`` of the way from ``last_obs`` to ``anchor``.

    Coincident points degrade to an isotropic prior with a 1 px deviation.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"waypoint fraction must be in (0, 1), got {fraction}")
    last_obs = np.asarray(last_obs, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    seg = anchor - last_obs
    length = float(np.hypot(*seg))
    mean = last_obs + fraction * seg
    if length == 0.0:
        return WaypointPrior(mean, 1.0, 1.0, None)
    sigma_perp = length / alpha
    return WaypointPrior(mean, sigma_perp, beta * sigma_perp, seg / length)


def fuse_prior(prob_map, prior: WaypointPrior) -> np.ndarray:
    """Pixel-wise product of map and prior density, renormalised to sum 1.

    Raises when the prediction's mass sits beyond the prior's 6-sigma
    Mahalanobis radius (mass-weighted prior value below ``exp(-18)``).
    """
    x = _grid(prob_map)
    if np.any(x < 0):
        raise NumericalError("fuse_prior needs a non-negative map")
    fused = x * prior.density(x.shape)
    total = fused.sum()
    mass = x.sum()
    if not mass > 0 or not total > mass * np.exp(-0.5 * DISJOINT_MAHALANOBIS ** 2):
        raise NumericalError(
            f"prior at ({prior.mean[0]:.1f}, {prior.mean[1]:.1f}) with sigma_perp={prior.sigma_perp:.2f} "
            "and the predicted waypoint distribution are disjoint"
        )
    return fused / total


def cws(
    waypoint_maps,
    goal,
    last_obs,
    n_p: int,
    n_f: int,
    waypoint_frames: Sequence[int],
    k_a: int,
    seed=0,
    alpha: float = 6.0,
    beta: float = 0.5,
    conditioned: bool = True,
    on_disjoint: str = "raise",
) -> np.ndarray:
    """Sample ``k_a`` waypoint tuples for one goal; returns ``(k_a, N_w, 2)``.

    Waypoints are fixed from the latest backwards, each anchored on the point
    fixed before it (the goal first). Hypothesis 0 uses the point estimate of
    every fused map; the others draw one pixel per fused map, in hypothesis
    order, so the first ``m`` hypotheses do not depend on ``k_a >= m``.
    ``conditioned=False`` skips the prior (unconditioned sampling).
    ``on_disjoint="prior"`` falls back to the prior alone instead of raising.
    """
    maps = [_grid(m) for m in waypoint_maps]
    frames = [int(w) for w in waypoint_frames]
    if len(maps) != len(frames):
        raise ShapeError(f"{len(maps)} waypoint maps for {len(frames)} waypoint frames")
    if k_a < 1:
        raise ConfigError(f"cws needs K_a >= 1, got {k_a}")
    if on_disjoint not in ("raise", "prior"):
        raise ConfigError(f"on_disjoint must be 'raise' or 'prior', got {on_disjoint!r}")
    rng = as_rng(seed)
    goal = np.asarray(goal, dtype=np.float64)
    last_obs = np.asarray(last_obs, dtype=np.float64)
    out = np.zeros((k_a, len(maps), 2))
    shared: dict[int, np.ndarray] = {}
    for h in range(k_a):
        anchor, anchor_frame = goal, n_p + n_f
        for i in range(len(maps) - 1, -1, -1):
            if conditioned:
                fraction = (frames[i] - n_p) / (anchor_frame - n_p)
                prior = waypoint_prior(last_obs, anchor, fraction, alpha, beta)
                try:
                    fused = fuse_prior(maps[i], prior)
                except NumericalError:
                    if on_disjoint == "raise":
                        raise
                    dens = prior.density(maps[i].shape)
                    fused = dens / dens.sum()
            else:
                if i not in shared:
                    shared[i] = maps[i] / maps[i].sum()
                fused = shared[i]
            if h == 0:
                point = point_estimate(fused)
            else:
                point = categorical_sample(fused, 1, rng)[0]
            out[h, i] = point
            anchor, anchor_frame = point, frames[i]
    return out


def trajectory_from_maps(
    maps,
    conditioning: Optional[dict[int, Sequence[float]]] = None,
    logits: bool = False,
) -> np.ndarray:
    """One point per future step, with conditioned steps overwritten.

    ``maps`` are probability maps (or decoder logits with ``logits=True``);
    ``conditioning`` maps a 0-based future index to the sampled point that
    conditioned the decoder at that step.
    """
    stack = np.asarray(maps, dtype=np.float64)
    if stack.ndim != 3:
        raise ShapeError(f"expected (n_f, H, W) maps, got shape {stack.shape}")
    traj = np.stack([softargmax(m if logits else log_odds(m)) for m in stack])
    for idx, point in (conditioning or {}).items():
        traj[idx] = np.asarray(point, dtype=np.float64)
    return traj


def entropy(prob_map) -> float:
    p = _grid(prob_map).ravel()
    p = p / p.sum()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())
