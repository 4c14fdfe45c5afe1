"""Residual 2D stabilization of the rendered output sequence.

Adjacent output frames get a motion model picked by AIC (translation,
similarity, or homography), the models are chained into per-frame poses
P_t = H_t P_{t-1}, the pose sequence is smoothed entrywise by a fixed number
of Jacobi relaxation sweeps, and each frame is warped by B_t = Pbar_t P_t^-1.
Poses are plain 3x3 matrices with h33 kept at 1; there is no manifold
projection anywhere, the smoother blends raw entries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, OutOfBounds, SingularModel, SingularPose, TooFewMatches
from .motion import ModelKind, select_model_aic
from .tracking import FeatureTrack, track_video

log = logging.getLogger(__name__)

_DET_FLOOR = 1e-12


@dataclass
class Stab2dParams:
    smoothness: float = 2.0  # lambda of the pose objective
    sigma: float = 2.0  # frames
    jacobi_iterations: int = 5

    def __post_init__(self):
        if self.smoothness < 0 or self.sigma < 0:
            raise OutOfBounds("smoothness and sigma must be nonnegative")
        if self.jacobi_iterations < 0:
            raise OutOfBounds("iteration count must be nonnegative")

    @property
    def window_radius(self) -> int:
        return int(math.floor(3.0 * self.sigma))


@dataclass
class PoseChain:
    poses: list[np.ndarray]  # P_0 .. P_{T-1}, each 3x3 with h33 = 1
    kinds: list[ModelKind | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.kinds:
            self.kinds = [None] * len(self.poses)
        if len(self.kinds) != len(self.poses):
            raise LengthMismatch("one model kind per pose required")

    def __len__(self) -> int:
        return len(self.poses)


def chain_poses(models: list[np.ndarray], kinds: list[ModelKind] | None = None) -> PoseChain:
    """Cumulative pose products P_t = H_t P_{t-1}, starting from identity.

    models[t] maps frame t to frame t+1, so the chain is one longer than the
    model list. Each product is renormalized to h33 = 1.
    """
    poses = [np.eye(3)]
    for idx, h in enumerate(models):
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (3, 3) or abs(float(np.linalg.det(h))) < _DET_FLOOR:
            raise SingularModel(f"model for pair {idx} is singular")
        p = h @ poses[-1]
        if abs(p[2, 2]) < _DET_FLOOR:
            raise SingularModel(f"pose {idx + 1} lost its projective normalization")
        poses.append(p / p[2, 2])
    kind_col: list[ModelKind | None] = [None]
    if kinds is not None:
        if len(kinds) != len(models):
            raise LengthMismatch("one kind per model required")
        kind_col += list(kinds)
    else:
        kind_col += [None] * len(models)
    return PoseChain(poses, kind_col)


def _neighbor_weights(params: Stab2dParams) -> list[tuple[int, float]]:
    if params.sigma <= 0.0:
        return []
    r = params.window_radius
    return [
        (d, math.exp(-(d * d) / (params.sigma * params.sigma)))
        for d in range(-r, r + 1)
        if d != 0
    ]


def smoothing_objective(
    original: list[np.ndarray], smoothed: list[np.ndarray], params: Stab2dParams
) -> float:
    """Data + weighted neighbor-difference energy of a smoothed chain.

    The neighbor sum runs over ordered pairs (each unordered pair twice),
    matching the fixed-point equations the Jacobi sweep solves.
    """
    if len(original) != len(smoothed):
        raise LengthMismatch("chain lengths differ")
    p = np.stack(original)
    q = np.stack(smoothed)
    total = float(np.sum((q - p) ** 2))
    t_count = len(p)
    for d, w in _neighbor_weights(params):
        if d <= 0:
            continue
        diff = q[: t_count - d] - q[d:]
        # symmetric pair counted once here for each direction, hence 2x
        total += 2.0 * params.smoothness * w * float(np.sum(diff**2))
    return total


def smooth_poses(chain: PoseChain, params: Stab2dParams | None = None) -> list[np.ndarray]:
    """Fixed number of strict Jacobi sweeps of the pose-smoothing equations.

    Every sweep recomputes all frames from the previous sweep's values:
    Pbar_t <- (P_t + 2 lambda sum_r w_r Pbar_r) / (1 + 2 lambda sum_r w_r),
    with Gaussian neighbor weights truncated at 3 sigma and boundaries
    renormalized by whatever neighbors exist. h33 stays 1 by construction
    but is renormalized anyway to absorb float drift.
    """
    params = params or Stab2dParams()
    if len(chain) == 0:
        return []
    p = np.stack(chain.poses)
    t_count = len(p)
    smoothed = p.copy()
    weights = _neighbor_weights(params)
    lam = params.smoothness
    if lam == 0.0 or not weights:
        return [m.copy() for m in chain.poses]
    for _ in range(params.jacobi_iterations):
        acc = np.zeros_like(p)
        wsum = np.zeros(t_count)
        for d, w in weights:
            if abs(d) >= t_count:
                continue
            if d > 0:
                acc[: t_count - d] += w * smoothed[d:]
                wsum[: t_count - d] += w
            else:
                acc[-d:] += w * smoothed[: t_count + d]
                wsum[-d:] += w
        gamma = 1.0 + 2.0 * lam * wsum
        smoothed = (p + 2.0 * lam * acc) / gamma[:, None, None]
        smoothed /= smoothed[:, 2, 2][:, None, None]
    return [m for m in smoothed]


def stabilizing_transforms(
    original: list[np.ndarray], smoothed: list[np.ndarray]
) -> list[np.ndarray]:
    """Per-frame correction B_t = Pbar_t P_t^-1, h33 = 1."""
    if len(original) != len(smoothed):
        raise LengthMismatch("chain lengths differ")
    out = []
    for idx, (p, q) in enumerate(zip(original, smoothed)):
        if abs(float(np.linalg.det(p))) < _DET_FLOOR:
            raise SingularPose(f"pose {idx} is singular")
        b = q @ np.linalg.inv(p)
        if abs(b[2, 2]) < _DET_FLOOR:
            raise SingularPose(f"correction {idx} lost its normalization")
        out.append(b / b[2, 2])
    return out


def _pair_matches(
    tracks: list[FeatureTrack], a: int, b: int
) -> tuple[np.ndarray, np.ndarray]:
    src = []
    dst = []
    for tr in tracks:
        if tr.covers(a) and tr.covers(b):
            src.append(tr.point_at(a))
            dst.append(tr.point_at(b))
    return np.array(src, dtype=np.float64).reshape(-1, 2), np.array(
        dst, dtype=np.float64
    ).reshape(-1, 2)


def stabilize_video(
    frames: list[np.ndarray],
    params: Stab2dParams | None = None,
    tracks: list[FeatureTrack] | None = None,
    seed: int = 0,
) -> tuple[list[np.ndarray], list[ModelKind]]:
    """Stabilizing transforms and per-pair model kinds for a frame sequence.

    Pairs with no usable matches degrade to an identity model recorded as a
    translation, with a warning; the show must go on.
    """
    if len(frames) < 2:
        raise OutOfBounds("need at least two frames")
    params = params or Stab2dParams()
    if tracks is None:
        tracks = track_video(frames)
    models: list[np.ndarray] = []
    kinds: list[ModelKind] = []
    for t in range(1, len(frames)):
        src, dst = _pair_matches(tracks, t - 1, t)
        if len(src) == 0:
            log.warning("no matches between frames %d and %d; using identity", t - 1, t)
            models.append(np.eye(3))
            kinds.append(ModelKind.TRANSLATION)
            continue
        try:
            kind, h = select_model_aic(src, dst, seed=seed)
        except TooFewMatches:
            log.warning("too few matches between frames %d and %d; using identity", t - 1, t)
            kind, h = ModelKind.TRANSLATION, np.eye(3)
        models.append(h)
        kinds.append(kind)
    chain = chain_poses(models, kinds)
    smoothed = smooth_poses(chain, params)
    transforms = stabilizing_transforms(chain.poses, smoothed)
    return transforms, kinds
