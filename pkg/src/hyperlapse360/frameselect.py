"""Output frame selection by dynamic programming.

Chooses a strictly increasing subset of input frames, starting at frame 0,
that trades off four costs per transition: staying aligned (homography
center drift between the candidate pair), collecting importance mass at the
target rate, keeping the jump near the target speedup, and avoiding jump
acceleration. The DP state is (previous frame, current frame), so the
acceleration term sees one frame of history; the first transition has none
and pays no acceleration cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .content import RoiTrack
from .errors import Degenerate, InfeasibleWindow, NoConsensus, OutOfBounds, TooFewMatches
from .geometry import angle_between_dirs
from .motion import fit_homography
from .viewplan import CameraPath


@dataclass
class FrameSelectParams:
    speedup: float = 10.0  # target jump length in input frames
    w_s: float = 5000.0
    w_v_sel: float = 200.0
    w_a_sel: float = 100.0
    tau_v: float = 200.0
    tau_a: float = 200.0
    tau_m_fraction: float = 0.1  # of the NFOV image diagonal
    gamma_fraction: float = 0.5
    jump_window: int | None = None  # defaults to ceil(2 * speedup)
    inclusive_saliency_sum: bool = False  # restore the printed closed sum

    def __post_init__(self):
        if self.speedup < 1.0:
            raise OutOfBounds("speedup must be at least 1")

    @property
    def window(self) -> int:
        if self.jump_window is not None:
            return self.jump_window
        return int(math.ceil(2.0 * self.speedup))


@dataclass
class ImportanceCurve:
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if np.any(self.scores < 0):
            raise OutOfBounds("importance scores must be nonnegative")

    @property
    def mean(self) -> float:
        return float(self.scores.mean()) if len(self.scores) else 0.0

    def __len__(self) -> int:
        return len(self.scores)


@dataclass
class FramePlan:
    frames: list[int]

    def __post_init__(self):
        if not self.frames or self.frames[0] != 0:
            raise OutOfBounds("plan must start at input frame 0")
        jumps = np.diff(self.frames)
        if len(jumps) and jumps.min() < 1:
            raise OutOfBounds("plan frames must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def jumps(self) -> np.ndarray:
        return np.diff(self.frames)


def frame_importance(path: CameraPath, rois: list[RoiTrack]) -> ImportanceCurve:
    """Per-frame score: saliency of the covering ROI nearest the camera.

    Frames no ROI covers score 0.
    """
    t_count = len(path)
    scores = np.zeros(t_count)
    for t in range(t_count):
        best_angle = None
        for roi in rois:
            if not roi.covers(t):
                continue
            a = angle_between_dirs(roi.pose_at(t), path.poses[t])
            if best_angle is None or a < best_angle:
                best_angle = a
                scores[t] = roi.saliency
    return ImportanceCurve(scores)


def saliency_cost(
    i: int, j: int, curve: ImportanceCurve, speedup: float, inclusive: bool = False
) -> float:
    """(importance collected over the jump minus the target rate)^2."""
    if i >= j:
        raise OutOfBounds("need i < j")
    hi = j + 1 if inclusive else j
    collected = float(np.sum(curve.scores[i:hi]))
    return (collected - speedup * curve.mean) ** 2


def velocity_cost(i: int, j: int, speedup: float, tau_v: float = 200.0) -> float:
    return min(((j - i) - speedup) ** 2, tau_v)


def acceleration_cost(h: int, i: int, j: int, tau_a: float = 200.0) -> float:
    return min(((j - i) - (i - h)) ** 2, tau_a)


def alignment_cost(
    pts_a: np.ndarray,
    pts_b: np.ndarray,
    width: float,
    height: float,
    tau_m_fraction: float = 0.1,
    gamma_fraction: float = 0.5,
) -> float:
    """Center drift under the pair homography, or the fixed penalty gamma.

    pts_a/pts_b are matched point pairs already projected into the output
    (NFOV) image plane. Pairs that cannot be registered reliably (< 4
    matches, degenerate fit, or mean squared residual past tau_m) cost gamma.
    """
    d = math.hypot(width, height)
    gamma = gamma_fraction * d
    tau_m = tau_m_fraction * d
    pts_a = np.asarray(pts_a, dtype=np.float64).reshape(-1, 2)
    pts_b = np.asarray(pts_b, dtype=np.float64).reshape(-1, 2)
    if len(pts_a) != len(pts_b):
        raise OutOfBounds("matched point lists differ in length")
    if len(pts_a) < 4:
        return gamma
    try:
        h = fit_homography(pts_a, pts_b)
    except (Degenerate, TooFewMatches, NoConsensus):
        return gamma
    ones = np.ones((len(pts_a), 1))
    proj = np.hstack([pts_a, ones]) @ h.T
    wcol = proj[:, 2:3]
    if np.any(np.abs(wcol) < 1e-12):
        return gamma
    proj = proj[:, :2] / wcol
    residual = float(np.mean(np.sum((proj - pts_b) ** 2, axis=1)))
    if residual >= tau_m:
        return gamma
    center = np.array([width / 2.0, height / 2.0, 1.0])
    moved = h @ center
    if abs(moved[2]) < 1e-12:
        return gamma
    moved = moved[:2] / moved[2]
    return float(np.sum((moved - center[:2]) ** 2))


def select_frames(
    t_count: int,
    params: FrameSelectParams,
    curve: ImportanceCurve | None = None,
    alignment: Callable[[int, int], float] | None = None,
) -> FramePlan:
    """Exact minimizer over monotone frame mappings.

    Always selects frame 0 first. The last frame e must lie within one
    target jump of the end: e > (T-1) - speedup. Ties break toward the
    smaller jump, then the earlier end frame.
    """
    if t_count < 2:
        raise OutOfBounds("need at least two frames")
    window = params.window
    if window < 1:
        raise InfeasibleWindow(f"jump window {window} is empty")
    if curve is None:
        curve = ImportanceCurve(np.zeros(t_count))
    if len(curve) != t_count:
        raise OutOfBounds(f"importance curve has {len(curve)} entries for {t_count} frames")

    s_mean = curve.mean
    prefix = np.concatenate([[0.0], np.cumsum(curve.scores)])

    def pair_cost(i: int, j: int) -> float:
        hi = j + 1 if params.inclusive_saliency_sum else j
        c_s = (float(prefix[hi] - prefix[i]) - params.speedup * s_mean) ** 2
        c_v = velocity_cost(i, j, params.speedup, params.tau_v)
        c_m = alignment(i, j) if alignment is not None else 0.0
        return c_m + params.w_s * c_s + params.w_v_sel * c_v

    inf = float("inf")
    # dp[f][j]: best cost of a plan ending with frames (f - j, f); j in 1..window
    dp = np.full((t_count, window + 1), inf)
    bp = np.full((t_count, window + 1), -1, dtype=np.int64)  # previous jump
    for f in range(1, min(window, t_count - 1) + 1):
        dp[f][f] = pair_cost(0, f)

    jumps = np.arange(1, window + 1, dtype=np.float64)
    for f in range(2, t_count):
        for j2 in range(1, min(window, f) + 1):
            mid = f - j2
            if mid < 1:
                continue
            arrive = pair_cost(mid, f)
            accel = params.w_a_sel * np.minimum((j2 - jumps) ** 2, params.tau_a)
            cand = dp[mid][1:] + accel
            k = int(np.argmin(cand))  # first minimum: smallest previous jump
            total = float(cand[k])
            if total < inf and total + arrive < dp[f][j2]:
                dp[f][j2] = total + arrive
                bp[f][j2] = k + 1

    end_lo = max(1, int(math.floor((t_count - 1) - params.speedup)) + 1)
    best = (inf, 0, 0)  # cost, jump, frame
    for f in range(end_lo, t_count):
        for j in range(1, window + 1):
            if dp[f][j] < best[0] or (
                dp[f][j] == best[0] and (j, f) < (best[1], best[2])
            ):
                best = (dp[f][j], j, f)
    if not math.isfinite(best[0]):
        raise InfeasibleWindow("no feasible plan reaches the end window")

    frames = []
    f, j = best[2], best[1]
    while f > 0:
        frames.append(f)
        pj = bp[f][j]
        f -= j
        j = int(pj)
    frames.append(0)
    frames.reverse()
    return FramePlan(frames)
