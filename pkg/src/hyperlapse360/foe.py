"""Focus-of-expansion estimation by great-circle Hough voting.

Under forward translation every optical-flow vector lies on the great circle
through the FOE and the pixel's direction, so each sampled flow vector votes
for all pixels on its great circle; the FOE/FOC show up as the strongest
antipodal pair of cells. The FOE is told apart from the FOC by the sign of the
radial flow around it, and the per-frame track is Gaussian-smoothed on
unwrapped longitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllMissing, DegenerateFlow, FlowTooSmall, LengthMismatch, NoConsensus, OutOfBounds
from .filters import gaussian_smooth, unwrap_degrees, wrap_degrees
from .geometry import (
    EquirectGeometry,
    SphericalDirection,
    UnitQuaternion,
    dirs_to_points,
    dirs_to_vecs,
    point_to_dir,
    points_to_dirs,
    quat_to_matrix,
    vecs_to_dirs,
)

FLOW_MIN = 0.5  # px; weaker vectors do not vote
CIRCLE_STEPS = 720
VOTE_STRIDE = 4
CONFIDENCE_MIN = 0.01
RADIAL_HALF_WINDOW = 10  # 21-px neighborhood for the FOE/FOC sign test
_CHUNK = 2048


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise LengthMismatch(f"flow component shapes {self.u.shape} vs {self.v.shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise OutOfBounds("flow contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def negated(self) -> "FlowField":
        return FlowField(-self.u, -self.v)


@dataclass
class VoteGrid:
    counts: np.ndarray  # (H/scale, W/scale) vote counts
    scale: int
    geometry: EquirectGeometry  # full-resolution geometry
    vectors_voted: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def great_circle_points(
    p1: tuple[float, float],
    v1: tuple[float, float],
    g: EquirectGeometry,
    steps: int = CIRCLE_STEPS,
    flow_min: float = FLOW_MIN,
) -> np.ndarray:
    """Pixel samples of the great circle through p1 and p1 + v1.

    theta=0 lands on p1 itself. Returns (steps, 2) continuous pixel coords.
    """
    vx, vy = float(v1[0]), float(v1[1])
    if np.hypot(vx, vy) <= flow_min:
        raise FlowTooSmall(f"|v| = {np.hypot(vx, vy):.3f} <= {flow_min}")
    d1 = point_to_dir(p1[0], p1[1], g)
    d2 = point_to_dir(p1[0] + vx, p1[1] + vy, g)
    z1 = dirs_to_vecs(np.array(d1.theta), np.array(d1.phi))
    z2 = dirs_to_vecs(np.array(d2.theta), np.array(d2.phi))
    b2 = z2 - float(np.dot(z1, z2)) * z1
    n = float(np.linalg.norm(b2))
    if n < 1e-9:
        raise DegenerateFlow("flow endpoints (anti)parallel on the sphere")
    b2 = b2 / n
    ang = np.radians(np.arange(steps, dtype=np.float64) * (360.0 / steps))
    circle = np.cos(ang)[:, None] * z1[None, :] + np.sin(ang)[:, None] * b2[None, :]
    th, ph = vecs_to_dirs(circle)
    xs, ys = dirs_to_points(th, ph, g)
    return np.stack([xs, ys], axis=1)


def derotate_flow(flow: FlowField, rel: UnitQuaternion, g: EquirectGeometry) -> FlowField:
    """Remove the camera-rotation component from a frame-pair flow field.

    rel maps frame-t directions into frame t+1 (the relative rotation the
    stabilizer estimated for this pair). Flow endpoints are pulled back into
    frame-t coordinates, so what remains is parallax flow only; a purely
    rotational field derotates to zero. Horizontal components are wrapped to
    the short way around the seam.
    """
    h, w = flow.shape
    if (w, h) != (g.width, g.height):
        raise LengthMismatch(f"flow {w}x{h} does not match geometry {g.width}x{g.height}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    th, ph = points_to_dirs((xx + flow.u).ravel(), (yy + flow.v).ravel(), g)
    # row-wise rel^-1: v @ R undoes the rotation applied as R @ v
    vecs = dirs_to_vecs(th, ph) @ quat_to_matrix(rel)
    x2, y2 = dirs_to_points(*vecs_to_dirs(vecs), g)
    du = (x2.reshape(h, w) - xx + w / 2.0) % w - w / 2.0
    dv = y2.reshape(h, w) - yy
    return FlowField(du, dv)


def vote_frame(
    flow: FlowField,
    g: EquirectGeometry,
    steps: int = CIRCLE_STEPS,
    stride: int = VOTE_STRIDE,
    flow_min: float = FLOW_MIN,
    downscale: int = 1,
) -> VoteGrid:
    """Accumulate great-circle votes from a stride-sampled flow field.

    The circle tangent at each sample comes from the half-step endpoints
    p +- v/2, with a fixed sign convention, so a vector and its negation
    cast bitwise-identical votes (the FOE/FOC split happens later, from the
    local divergence). Degenerate and sub-threshold vectors are skipped
    silently. downscale > 1 shrinks the vote grid; it must divide both
    height and half-width so antipodal cells stay exact.
    """
    h, w = flow.shape
    if (w, h) != (g.width, g.height):
        raise LengthMismatch(f"flow {w}x{h} does not match geometry {g.width}x{g.height}")
    if downscale < 1 or h % downscale or (w // 2) % downscale:
        raise OutOfBounds(f"downscale {downscale} must divide height and half-width")

    gy, gx = np.mgrid[0:h:stride, 0:w:stride]
    px = gx.ravel().astype(np.float64)
    py = gy.ravel().astype(np.float64)
    fu = flow.u[gy.ravel(), gx.ravel()]
    fv = flow.v[gy.ravel(), gx.ravel()]
    keep = np.hypot(fu, fv) > flow_min
    px, py, fu, fv = px[keep], py[keep], fu[keep], fv[keep]

    z1 = dirs_to_vecs(*points_to_dirs(px, py, g))
    ahead = dirs_to_vecs(*points_to_dirs(px + 0.5 * fu, py + 0.5 * fv, g))
    behind = dirs_to_vecs(*points_to_dirs(px - 0.5 * fu, py - 0.5 * fv, g))
    tang = ahead - behind  # exactly negates with the flow
    b2 = tang - (z1 * tang).sum(axis=1)[:, None] * z1
    norms = np.linalg.norm(b2, axis=1)
    ok = norms > 1e-9
    z1, b2 = z1[ok], b2[ok] / norms[ok, None]
    # sign convention: first nonzero component positive, so +-v trace the
    # same circle samples and their votes cancel out of the comparison
    flip = (b2[:, 0] < 0) | (
        (b2[:, 0] == 0) & ((b2[:, 1] < 0) | ((b2[:, 1] == 0) & (b2[:, 2] < 0)))
    )
    b2[flip] *= -1.0
    n_vec = len(z1)

    hs, ws = h // downscale, w // downscale
    counts = np.zeros(hs * ws, dtype=np.int64)
    ang = np.radians(np.arange(steps, dtype=np.float64) * (360.0 / steps))
    ca, sa = np.cos(ang), np.sin(ang)
    for lo in range(0, n_vec, _CHUNK):
        c1 = z1[lo : lo + _CHUNK]
        c2 = b2[lo : lo + _CHUNK]
        pts = ca[None, :, None] * c1[:, None, :] + sa[None, :, None] * c2[:, None, :]
        th, ph = vecs_to_dirs(pts)
        xs, ys = dirs_to_points(th, ph, g)
        xi = np.mod(np.rint(xs).astype(np.int64), w) // downscale
        yi = np.clip(np.rint(ys).astype(np.int64), 0, h - 1) // downscale
        np.add.at(counts, (yi * ws + xi).ravel(), 1)
    return VoteGrid(counts.reshape(hs, ws), downscale, g, vectors_voted=n_vec)


def antipode_grid(counts: np.ndarray) -> np.ndarray:
    """counts evaluated at each cell's antipodal cell."""
    h, w = counts.shape
    return np.roll(counts[::-1, :], w // 2, axis=1)


def locate_foe(votes: VoteGrid, flow: FlowField) -> tuple[SphericalDirection, SphericalDirection, float]:
    """Strongest antipodal vote pair, disambiguated by local flow divergence.

    Returns (foe, foc, confidence) where confidence is the fraction of voting
    vectors whose circle supports the winning pair (clipped to 1).
    """
    counts = votes.counts
    if votes.total == 0:
        raise NoConsensus("no votes cast")
    pair = counts + antipode_grid(counts)
    yi, xi = np.unravel_index(int(np.argmax(pair)), pair.shape)
    pair_score = int(pair[yi, xi])
    confidence = min(1.0, pair_score / (2.0 * max(1, votes.vectors_voted)))
    if confidence < CONFIDENCE_MIN:
        raise NoConsensus(f"confidence {confidence:.4f} below {CONFIDENCE_MIN}")

    g = votes.geometry
    s = votes.scale
    x_full = int(xi) * s + (s - 1) // 2
    y_full = int(yi) * s + (s - 1) // 2
    cand = point_to_dir(float(x_full), float(y_full), g)
    anti = SphericalDirection(cand.theta + 180.0, -cand.phi)
    if _mean_radial_component(flow, x_full, y_full) >= 0.0:
        return cand, anti, confidence
    return anti, cand, confidence


def _mean_radial_component(flow: FlowField, cx: int, cy: int, half: int = RADIAL_HALF_WINDOW) -> float:
    """Mean of dot(flow, outward unit direction) over a (2*half+1)^2 box.

    Columns wrap around the seam; the center pixel (zero direction) is skipped.
    """
    h, w = flow.shape
    ys = np.clip(np.arange(cy - half, cy + half + 1), 0, h - 1)
    xs = np.mod(np.arange(cx - half, cx + half + 1), w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    dx = (xx - cx + w / 2.0) % w - w / 2.0  # shortest wrapped offset
    dy = yy.astype(np.float64) - cy
    r = np.hypot(dx, dy)
    mask = r > 1e-9
    u = flow.u[yy, xx]
    v = flow.v[yy, xx]
    radial = (u * dx + v * dy)[mask] / r[mask]
    return float(radial.mean()) if radial.size else 0.0


def smooth_foe_track(
    track: list[SphericalDirection | None],
    sigma: float,
) -> list[SphericalDirection]:
    """Fill missing frames from the nearest estimate, then Gaussian-smooth.

    Longitude is unwrapped before filtering and rewrapped after; latitude is
    filtered directly. Raises AllMissing when no frame has an estimate.
    """
    n = len(track)
    present = [i for i, d in enumerate(track) if d is not None]
    if not present:
        raise AllMissing("FOE track has no estimates")
    filled_theta = np.empty(n)
    filled_phi = np.empty(n)
    pi = np.asarray(present)
    for i in range(n):
        j = int(pi[np.argmin(np.abs(pi - i))])  # nearest present frame, ties -> earlier
        filled_theta[i] = track[j].theta
        filled_phi[i] = track[j].phi
    theta_s = gaussian_smooth(unwrap_degrees(filled_theta), sigma)
    phi_s = np.clip(gaussian_smooth(filled_phi, sigma), -90.0, 90.0)
    theta_s = wrap_degrees(theta_s)
    return [SphericalDirection(t, p) for t, p in zip(theta_s, phi_s)]
