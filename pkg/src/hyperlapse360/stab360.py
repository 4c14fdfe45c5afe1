"""Rotation-only stabilization of equirectangular video.

Per adjacent frame pair, the rotation between lifted feature directions is
estimated with Horn's closed-form absolute orientation inside a small RANSAC
loop. Rotations are chained into a cumulative track, the track is smoothed by
Gaussian quaternion blending, and each frame is rewarped by the corrective
rotation between the raw and smoothed tracks.

Composition bookkeeping (degrees of freedom nailed down once):
  q_rel[t]   maps directions seen in frame t to directions seen in frame t+1
  Q_cum[t] = q_rel[t-1] * Q_cum[t-1], Q_cum[0] = identity, so a static world
             point seen at v in frame 0 appears at Q_cum[t] v in frame t
  R_corr[t] = Q_smooth[t] * Q_cum[t]^-1  (world-frame correction; warping
             frame t by it moves every static point to Q_smooth[t] v, which is
             smooth by construction)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, InsufficientTracks, LengthMismatch, NoConsensus
from .filters import gaussian_weights
from .geometry import (
    EquirectGeometry,
    UnitQuaternion,
    dirs_to_points,
    dirs_to_vecs,
    points_to_dirs,
    quat_inverse,
    quat_mul,
    quat_to_matrix,
    quat_weighted_blend,
    vecs_to_dirs,
)
from .sampling import sample_equirect
from .tracking import FeatureTrack, tracks_covering

JACOBI_TOL = 1e-12
EIGENGAP_TOL = 1e-7
RANSAC_ROT_ITERATIONS = 50
RANSAC_INLIER_ANGLE = 1.0  # degrees
SMOOTH_SIGMA = 20.0


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi diagonalization of a small symmetric matrix.

    Returns (eigenvalues desc, eigenvectors as columns). Deterministic and
    dependency-free; meant for the 4x4 profile matrix, works for any small n.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, atol=1e-9):
        raise DegenerateConfiguration("jacobi_eigh expects a symmetric matrix")
    v = np.eye(n)
    scale = max(1.0, float(np.abs(a).max()))
    # norm of the strict upper triangle; the subtractive form
    # sum(a^2) - sum(diag^2) cancels and cannot see mass below
    # sqrt(eps) * ||a||_F, which stalls convergence around 1e-7
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0) * float(np.linalg.norm(a[iu]))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale * 1e-4:
                    continue
                # classic Jacobi rotation annihilating a[p, q]
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    order = np.argsort(np.diag(a))[::-1]
    return np.diag(a)[order], v[:, order]


def estimate_rotation_horn(src_vecs: np.ndarray, dst_vecs: np.ndarray) -> UnitQuaternion:
    """Closed-form rotation R maximizing sum dot(R a_i, b_i) over unit vectors.

    Largest-eigenvalue eigenvector of the 4x4 profile matrix. Raises
    DegenerateConfiguration for < 3 pairs or configurations (collinear inputs)
    where the optimum is not unique.
    """
    a = np.asarray(src_vecs, dtype=np.float64)
    b = np.asarray(dst_vecs, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise LengthMismatch(f"vector sets {a.shape} vs {b.shape}")
    n = len(a)
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 direction pairs, got {n}")
    s = a.T @ b  # profile matrix, s[i, j] = sum a_i b_j
    sxx, sxy, sxz = s[0]
    syx, syy, syz = s[1]
    szx, szy, szz = s[2]
    m = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    vals, vecs = jacobi_eigh(m)
    if vals[0] - vals[1] < EIGENGAP_TOL * max(1.0, abs(vals[0])):
        raise DegenerateConfiguration("rotation not unique (degenerate direction set)")
    w, x, y, z = vecs[:, 0]
    return UnitQuaternion(float(w), float(x), float(y), float(z))


def horn_ransac(
    src_vecs: np.ndarray,
    dst_vecs: np.ndarray,
    iterations: int = RANSAC_ROT_ITERATIONS,
    inlier_angle_deg: float = RANSAC_INLIER_ANGLE,
    rng: np.random.Generator | int | None = 0,
) -> tuple[UnitQuaternion, np.ndarray]:
    """RANSAC wrapper around Horn's method with 3-pair minimal samples."""
    a = np.asarray(src_vecs, dtype=np.float64)
    b = np.asarray(dst_vecs, dtype=np.float64)
    n = len(a)
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 direction pairs, got {n}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    cos_gate = np.cos(np.radians(inlier_angle_deg))

    best_mask: np.ndarray | None = None
    best_count = 0
    for _ in range(iterations):
        idx = rng.choice(n, size=3, replace=False) if n > 3 else np.arange(3)
        try:
            q = estimate_rotation_horn(a[idx], b[idx])
        except DegenerateConfiguration:
            continue
        rotated = a @ quat_to_matrix(q).T
        mask = (rotated * b).sum(axis=1) > cos_gate
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
        if n == 3:
            break
    if best_mask is None or best_count < 3:
        raise NoConsensus(f"rotation consensus failed ({best_count}/{n} inliers)")
    return estimate_rotation_horn(a[best_mask], b[best_mask]), best_mask


def relative_rotations(
    tracks: list[FeatureTrack],
    g: EquirectGeometry,
    frame_count: int,
    rng: np.random.Generator | int | None = 0,
    on_insufficient: str = "raise",
) -> list[UnitQuaternion]:
    """Per-adjacent-pair rotations from equirect feature tracks.

    Returns frame_count - 1 quaternions; q[t] maps frame-t directions into
    frame t+1. Pairs spanned by fewer than 3 tracks raise InsufficientTracks,
    or get the identity when on_insufficient="identity". Pairs whose RANSAC
    finds no consensus fall back to a full-set Horn fit.
    """
    if on_insufficient not in ("raise", "identity"):
        raise ValueError(f"on_insufficient: {on_insufficient!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out: list[UnitQuaternion] = []
    for t in range(frame_count - 1):
        alive = tracks_covering(tracks, t, t + 1)
        if len(alive) < 3:
            if on_insufficient == "raise":
                raise InsufficientTracks(t)
            out.append(UnitQuaternion.identity())
            continue
        pa = np.array([tr.point_at(t) for tr in alive])
        pb = np.array([tr.point_at(t + 1) for tr in alive])
        va = dirs_to_vecs(*points_to_dirs(pa[:, 0], pa[:, 1], g))
        vb = dirs_to_vecs(*points_to_dirs(pb[:, 0], pb[:, 1], g))
        try:
            q, _ = horn_ransac(va, vb, rng=rng)
        except (NoConsensus, DegenerateConfiguration):
            q = estimate_rotation_horn(va, vb)
        out.append(q)
    return out


def cumulative_rotations(rels: list[UnitQuaternion]) -> list[UnitQuaternion]:
    """Chain relative rotations; element t maps frame-0 directions to frame t."""
    cum = [UnitQuaternion.identity()]
    for q in rels:
        cum.append(quat_mul(q, cum[-1]))
    return cum


def smooth_rotations(cum: list[UnitQuaternion], sigma: float = SMOOTH_SIGMA) -> list[UnitQuaternion]:
    """Gaussian blend of the cumulative track over [t - 3 sigma, t + 3 sigma]."""
    if sigma <= 0.0:
        return list(cum)
    n = len(cum)
    reach = int(np.floor(3.0 * sigma))
    out: list[UnitQuaternion] = []
    for t in range(n):
        lo = max(0, t - reach)
        hi = min(n, t + reach + 1)
        w = gaussian_weights(np.arange(lo, hi) - t, sigma)
        out.append(quat_weighted_blend(cum[lo:hi], w))
    return out


def corrective_rotations(cum: list[UnitQuaternion], smooth: list[UnitQuaternion]) -> list[UnitQuaternion]:
    """Per-frame warp rotations taking the raw track onto the smoothed one.

    R[t] = Q_smooth[t] * Q_cum[t]^-1, so composing onto the raw track
    (quat_mul(R[t], Q_cum[t])) reproduces the smoothed track exactly, and a
    static point at v in frame 0 lands at Q_smooth[t] v after warping.
    """
    if len(cum) != len(smooth):
        raise LengthMismatch(f"{len(cum)} cumulative vs {len(smooth)} smoothed")
    return [quat_mul(s, quat_inverse(c)) for c, s in zip(cum, smooth)]


_grid_cache: dict[tuple[int, int], np.ndarray] = {}


def _output_grid_vecs(g: EquirectGeometry) -> np.ndarray:
    key = (g.width, g.height)
    grid = _grid_cache.get(key)
    if grid is None:
        xs = np.arange(g.width, dtype=np.float64)
        ys = np.arange(g.height, dtype=np.float64)
        th, ph = points_to_dirs(*np.meshgrid(xs, ys), g)
        grid = dirs_to_vecs(th, ph)
        if len(_grid_cache) > 4:
            _grid_cache.clear()
        _grid_cache[key] = grid
    return grid


def warp_equirect(image: np.ndarray, rotation: UnitQuaternion) -> np.ndarray:
    """Rotate panorama content by `rotation` via inverse mapping.

    Each output pixel direction d samples the input at rotation^-1 d with
    bilinear interpolation (columns wrap, rows clamp). Output dtype matches
    the input; uint8 images are rounded.
    """
    h, w = image.shape[:2]
    g = EquirectGeometry(w, h)
    vecs = _output_grid_vecs(g)
    # R^-1 v for row vectors: v @ R (R orthogonal)
    rotated = vecs.reshape(-1, 3) @ quat_to_matrix(rotation)
    th, ph = vecs_to_dirs(rotated.reshape(h, w, 3))
    xs, ys = dirs_to_points(th, ph, g)
    out = sample_equirect(image, xs, ys)
    if np.issubdtype(image.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(image.dtype)
    return out.astype(image.dtype, copy=False)


@dataclass
class RotationTrack:
    """Per-frame rotation bookkeeping for a stabilized sequence."""

    rel: list[UnitQuaternion]  # length T-1; rel[t] maps frame t -> t+1
    cum: list[UnitQuaternion]  # length T
    smooth: list[UnitQuaternion]  # length T
    corr: list[UnitQuaternion]  # length T

    def __post_init__(self):
        t = len(self.cum)
        if not (len(self.rel) == t - 1 and len(self.smooth) == t and len(self.corr) == t):
            raise LengthMismatch("rotation track sequence lengths disagree")

    @property
    def frame_count(self) -> int:
        return len(self.cum)


def compute_rotation_track(
    tracks: list[FeatureTrack],
    g: EquirectGeometry,
    frame_count: int,
    sigma: float = SMOOTH_SIGMA,
    rng: np.random.Generator | int | None = 0,
    on_insufficient: str = "raise",
) -> RotationTrack:
    rel = relative_rotations(tracks, g, frame_count, rng=rng, on_insufficient=on_insufficient)
    cum = cumulative_rotations(rel)
    smooth = smooth_rotations(cum, sigma)
    corr = corrective_rotations(cum, smooth)
    return RotationTrack(rel, cum, smooth, corr)


def stabilize_frames(frames, track: RotationTrack) -> list[np.ndarray]:
    """Warp every frame by its corrective rotation."""
    if len(frames) != track.frame_count:
        raise LengthMismatch(f"{len(frames)} frames vs track of {track.frame_count}")
    return [warp_equirect(f, r) for f, r in zip(frames, track.corr)]
