"""Camera path planning over the whole video.

Minimizes, independently for longitude and latitude,

    sum_t  w_r * sum_{i in window(t)} wG(t-i) * s_i * |p_t - roi_i|
         + w_f * (p_t - foe_t)^2
         + w_v * (p_t - p_{t-1})^2
         + w_a * (p_{t+1} - 2 p_t + p_{t-1})^2

with wG(d) = exp(-d^2 / sigma_t^2). The L1 data term is handled by IRLS:
an L2 initialization, then each pass reweights every data residual by
1 / max(|r|, eps) and re-solves the banded normal equations by conjugate
gradient. Boundary velocity/acceleration terms that would reference frames
outside [0, T) are dropped.

Longitudes are folded onto a continuous reference signal before optimizing
(a seam crossing must not look like a 360 degree sprint) and rewrapped after.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .content import RoiTrack
from .errors import CgDivergence, ConvergenceFailure, LengthMismatch, OutOfBounds
from .filters import unwrap_degrees
from .geometry import SphericalDirection

# relative slack for the IRLS monotonicity guard: CG solves are inexact, so
# demand non-increase only beyond this fraction of the objective's scale
_OBJECTIVE_SLACK = 1e-9


@dataclass
class PlanParams:
    w_r: float = 5.0
    w_f: float = 1.0
    w_v: float = 50.0
    w_a: float = 10.0
    sigma_t: float = 50.0  # frames; 10x the target speedup is the usual choice
    irls_iterations: int = 10
    irls_epsilon: float = 1e-4  # degrees
    cg_tolerance: float = 1e-8
    cg_max_iterations: int | None = None  # defaults to 10 T at solve time
    normalize_saliency: bool = True

    @classmethod
    def for_speedup(cls, speedup: float, **overrides) -> "PlanParams":
        return cls(sigma_t=10.0 * float(speedup), **overrides)

    def __post_init__(self):
        for name in ("w_r", "w_f", "w_v", "w_a"):
            if getattr(self, name) < 0:
                raise OutOfBounds(f"{name} must be nonnegative")
        if self.sigma_t <= 0:
            raise OutOfBounds("sigma_t must be positive")


@dataclass
class CameraPath:
    poses: list[SphericalDirection]
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.poses)

    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.poses])

    def phis(self) -> np.ndarray:
        return np.array([p.phi for p in self.poses])


@dataclass
class BandedSystem:
    """Symmetric pentadiagonal system A x = rhs stored by diagonals."""

    main: np.ndarray
    off1: np.ndarray
    off2: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        n = len(self.main)
        if len(self.off1) != max(0, n - 1) or len(self.off2) != max(0, n - 2):
            raise LengthMismatch("diagonal lengths inconsistent")
        if len(self.rhs) != n:
            raise LengthMismatch("rhs length does not match system size")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.main * x
        if len(self.off1):
            y[:-1] += self.off1 * x[1:]
            y[1:] += self.off1 * x[:-1]
        if len(self.off2):
            y[:-2] += self.off2 * x[2:]
            y[2:] += self.off2 * x[:-2]
        return y

    def dense(self) -> np.ndarray:
        n = len(self.main)
        a = np.diag(self.main)
        if n >= 2:
            a += np.diag(self.off1, 1) + np.diag(self.off1, -1)
        if n >= 3:
            a += np.diag(self.off2, 2) + np.diag(self.off2, -2)
        return a


def solve_weighted_ls(
    system: BandedSystem,
    tolerance: float = 1e-8,
    max_iterations: int | None = None,
    x0: np.ndarray | None = None,
    residuals: list | None = None,
) -> np.ndarray:
    """Conjugate gradient on an SPD banded system.

    Stops when the relative residual drops to `tolerance` or after
    `max_iterations` (default 10x system size) passes. `residuals`, if given,
    collects the relative residual after every iteration.
    """
    b = system.rhs
    n = len(b)
    if max_iterations is None:
        max_iterations = 10 * n
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - system.matvec(x)
    p = r.copy()
    rs = float(r @ r)
    if residuals is not None:
        residuals.append(math.sqrt(rs) / b_norm)
    for _ in range(max_iterations):
        if math.sqrt(rs) <= tolerance * b_norm:
            break
        ap = system.matvec(p)
        denom = float(p @ ap)
        if not np.isfinite(denom) or denom <= 0.0:
            raise CgDivergence("system is not positive definite")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise CgDivergence("residual overflowed")
        if residuals is not None:
            residuals.append(math.sqrt(rs_new) / b_norm)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _smoothness_band(t_count: int, w_v: float, w_a: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    main = np.zeros(t_count)
    off1 = np.zeros(max(0, t_count - 1))
    off2 = np.zeros(max(0, t_count - 2))
    if w_v > 0 and t_count >= 2:
        main[:-1] += w_v
        main[1:] += w_v
        off1 -= w_v
    if w_a > 0 and t_count >= 3:
        main[: t_count - 2] += w_a
        main[1 : t_count - 1] += 4.0 * w_a
        main[2:] += w_a
        off1[:-1] += -2.0 * w_a
        off1[1:] += -2.0 * w_a
        off2 += w_a
    return main, off1, off2


@dataclass
class _DataTerm:
    """Flattened (frame, target value, weight) triples of the L1 data term."""

    t_idx: np.ndarray
    values: np.ndarray
    weights: np.ndarray  # w_r * saliency * temporal gaussian

    @property
    def empty(self) -> bool:
        return len(self.t_idx) == 0


def _expand_data_term(
    frames: np.ndarray, values: np.ndarray, saliencies: np.ndarray, t_count: int, params: PlanParams
) -> _DataTerm:
    if len(frames) == 0:
        z = np.zeros(0)
        return _DataTerm(np.zeros(0, dtype=np.int64), z, z)
    radius = int(math.floor(3.0 * params.sigma_t))
    offs = np.arange(-radius, radius + 1)
    gauss = np.exp(-(offs.astype(np.float64) ** 2) / (params.sigma_t**2))
    t_grid = frames[:, None] + offs[None, :]
    valid = (t_grid >= 0) & (t_grid < t_count)
    weights = params.w_r * saliencies[:, None] * gauss[None, :]
    vals = np.broadcast_to(values[:, None], t_grid.shape)
    return _DataTerm(t_grid[valid].astype(np.int64), vals[valid].copy(), weights[valid].copy())


def _objective(
    p: np.ndarray, data: _DataTerm, foe: np.ndarray | None, params: PlanParams
) -> float:
    """Exact per-coordinate objective with the true L1 data term."""
    total = 0.0
    if not data.empty:
        total += float(np.sum(data.weights * np.abs(p[data.t_idx] - data.values)))
    if foe is not None:
        total += params.w_f * float(np.sum((p - foe) ** 2))
    if len(p) >= 2:
        total += params.w_v * float(np.sum(np.diff(p) ** 2))
    if len(p) >= 3:
        total += params.w_a * float(np.sum(np.diff(p, 2) ** 2))
    return total


def _solve_coordinate(
    data: _DataTerm,
    foe: np.ndarray | None,
    t_count: int,
    params: PlanParams,
) -> tuple[np.ndarray, list[float]]:
    """L2 initialization then IRLS passes; returns path and objective trace."""
    base_main, off1, off2 = _smoothness_band(t_count, params.w_v, params.w_a)
    foe_diag = params.w_f if foe is not None else 0.0
    foe_rhs = params.w_f * foe if foe is not None else np.zeros(t_count)
    max_iter = params.cg_max_iterations

    def solve(irls_w: np.ndarray | None, x0: np.ndarray | None) -> np.ndarray:
        main = base_main + foe_diag
        rhs = foe_rhs.copy()
        if not data.empty:
            w = data.weights if irls_w is None else data.weights * irls_w
            main = main + np.bincount(data.t_idx, weights=w, minlength=t_count)
            rhs += np.bincount(data.t_idx, weights=w * data.values, minlength=t_count)
        system = BandedSystem(main, off1, off2, rhs)
        return solve_weighted_ls(system, params.cg_tolerance, max_iter, x0=x0)

    p = solve(None, None)  # L1 replaced by L2 for the initial solution
    trace = [_objective(p, data, foe, params)]
    for _ in range(params.irls_iterations):
        if data.empty:
            trace.append(trace[-1])
            continue
        r = np.abs(p[data.t_idx] - data.values)
        # 1/2 makes the pass an exact majorize-minimize step: w r^2 / (2 r_old)
        # + w r_old / 2 >= w |r| with equality at r_old, so the objective
        # cannot rise. Plain 1/r_old weights overweight the data term against
        # the quadratic terms and do rise on some inputs.
        irls_w = 0.5 / np.maximum(r, params.irls_epsilon)
        p = solve(irls_w, p)
        trace.append(_objective(p, data, foe, params))
    return p, trace


def _wrap_to_reference(values: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Shift each longitude by a multiple of 360 into (ref-180, ref+180]."""
    return reference - ((reference - values + 180.0) % 360.0 - 180.0)


def _reference_longitudes(
    rois: list[RoiTrack], foe: list[SphericalDirection] | None, t_count: int
) -> np.ndarray:
    """Continuous per-frame longitude reference for seam-free optimization."""
    raw = np.full(t_count, np.nan)
    if foe is not None:
        raw[:] = [d.theta for d in foe]
    else:
        best = np.full(t_count, -np.inf)
        for roi in rois:
            for t in range(roi.start_frame, min(roi.end_frame + 1, t_count)):
                if roi.saliency > best[t]:
                    best[t] = roi.saliency
                    raw[t] = roi.pose_at(t).theta
        present = np.flatnonzero(~np.isnan(raw))
        if len(present) == 0:
            return np.zeros(t_count)
        missing = np.flatnonzero(np.isnan(raw))
        if len(missing):
            nearest = present[np.argmin(np.abs(missing[:, None] - present[None, :]), axis=1)]
            raw[missing] = raw[nearest]
    return unwrap_degrees(raw)


def plan_view_path(
    rois: list[RoiTrack],
    foe_track: list[SphericalDirection] | None,
    t_count: int,
    params: PlanParams | None = None,
) -> CameraPath:
    """Optimal per-frame viewing direction for the whole input video.

    With neither ROIs nor an FOE track there is nothing to aim at: the
    planner returns a constant (0, 0) path and sets a warning instead of
    failing, so the rest of the pipeline still runs.
    """
    params = params or PlanParams()
    if t_count < 1:
        raise OutOfBounds("need at least one frame")
    if foe_track is not None and len(foe_track) != t_count:
        raise LengthMismatch(f"FOE track has {len(foe_track)} entries for {t_count} frames")
    warnings: list[str] = []
    if not rois and foe_track is None:
        warnings.append("no ROIs and no FOE track; returning a constant (0, 0) path")
        return CameraPath([SphericalDirection(0.0, 0.0)] * t_count, warnings)

    saliencies = np.array([r.saliency for r in rois], dtype=np.float64)
    if params.normalize_saliency and len(saliencies) and saliencies.max() > 0:
        saliencies = saliencies / saliencies.max()

    ref = _reference_longitudes(rois, foe_track, t_count)
    frames = []
    thetas = []
    phis = []
    sals = []
    for roi, s in zip(rois, saliencies):
        for t in range(max(0, roi.start_frame), min(roi.end_frame + 1, t_count)):
            pose = roi.pose_at(t)
            frames.append(t)
            thetas.append(pose.theta)
            phis.append(pose.phi)
            sals.append(s)
    frames = np.array(frames, dtype=np.int64)
    sals = np.array(sals, dtype=np.float64)
    thetas = _wrap_to_reference(np.array(thetas, dtype=np.float64), ref[frames] if len(frames) else np.zeros(0))
    phis = np.array(phis, dtype=np.float64)

    foe_theta = foe_phi = None
    if foe_track is not None:
        foe_theta = _wrap_to_reference(np.array([d.theta for d in foe_track]), ref)
        foe_phi = np.array([d.phi for d in foe_track])

    data_theta = _expand_data_term(frames, thetas, sals, t_count, params)
    data_phi = _expand_data_term(frames, phis, sals, t_count, params)

    p_theta, trace_theta = _solve_coordinate(data_theta, foe_theta, t_count, params)
    p_phi, trace_phi = _solve_coordinate(data_phi, foe_phi, t_count, params)

    trace = np.asarray(trace_theta) + np.asarray(trace_phi)
    slack = _OBJECTIVE_SLACK * max(1.0, abs(float(trace[0])))
    rises = np.flatnonzero(np.diff(trace) > slack)
    if len(rises):
        raise ConvergenceFailure(
            f"objective rose at IRLS iteration {int(rises[0]) + 1}: "
            f"{trace[rises[0]]:.9g} -> {trace[rises[0] + 1]:.9g}"
        )

    poses = [
        SphericalDirection(th, min(90.0, max(-90.0, ph)))
        for th, ph in zip(p_theta, p_phi)
    ]
    if np.any(np.abs(p_phi) > 90.0):
        warnings.append("latitude clipped to +-90 degrees")
    return CameraPath(poses, warnings)
