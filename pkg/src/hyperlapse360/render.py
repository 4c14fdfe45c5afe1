"""NFOV rendering: ROI-driven zoom curve, perspective projection, final warps.

The zoom rule ties the horizontal FOV to the targeted region's size so the
virtual camera closes in on interesting objects and relaxes back to the
default view elsewhere. Rendering is a zero-roll pinhole projection out of the
equirect sphere; the residual 2D corrections from the stabilizer are applied
as plain projective warps on the rendered frames.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .content import RoiTrack
from .errors import InvalidFov, OutOfBounds, SingularTransform
from .filters import gaussian_smooth
from .geometry import (
    EquirectGeometry,
    SphericalDirection,
    dirs_to_points,
    dirs_to_vecs,
    vecs_to_dirs,
)
from .sampling import sample_equirect, sample_planar
from .viewplan import CameraPath

log = logging.getLogger(__name__)

DEFAULT_ASPECT = 4.0 / 3.0
DEFAULT_TARGET_RATIO = 0.001
POLE_WARN_DEG = 85.0


@dataclass
class ZoomParams:
    aspect: float = DEFAULT_ASPECT  # c, output width over height
    target_ratio: float = DEFAULT_TARGET_RATIO  # r_t, ROI area over view area
    default_fov: float = 100.0
    min_fov: float = 30.0
    smooth_sigma: float = 15.0  # frames

    def __post_init__(self):
        if not 0.0 < self.min_fov <= self.default_fov < 180.0:
            raise InvalidFov("need 0 < min_fov <= default_fov < 180")
        if self.target_ratio <= 0.0 or self.aspect <= 0.0:
            raise OutOfBounds("aspect and target_ratio must be positive")


@dataclass
class FovCurve:
    """Per-frame horizontal FOV in degrees."""

    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def at(self, frame: int) -> float:
        return float(self.values[frame])


def raw_fov(area_px2: float, width: int, params: ZoomParams) -> float:
    """FOV that makes the ROI cover target_ratio of the rendered view.

    f = sqrt(c * A / r) * 360 / W_i; the cropped view of width W_o spans
    360 * W_o / W_i degrees, and r = c * A / W_o^2 fixes W_o from the area.
    """
    w_o = math.sqrt(params.aspect * area_px2 / params.target_ratio)
    return w_o * 360.0 / width


def fov_curve(
    rois: list[RoiTrack],
    path: CameraPath,
    g: EquirectGeometry,
    params: ZoomParams | None = None,
) -> FovCurve:
    """Smoothed per-frame FOV from the areas of the targeted regions.

    Frames covered by no ROI sit at the default FOV. When several ROIs cover
    a frame the most salient one sets the zoom. Raw values are clamped to
    [min_fov, default_fov], Gaussian smoothed along time, and re-clamped.
    """
    params = params or ZoomParams()
    values = np.full(len(path), params.default_fov)
    for t in range(len(path)):
        covering = [r for r in rois if r.covers(t)]
        if not covering:
            continue
        target = max(covering, key=lambda r: r.saliency)
        values[t] = raw_fov(target.area_at(t), g.width, params)
    np.clip(values, params.min_fov, params.default_fov, out=values)
    if params.smooth_sigma > 0.0:
        values = gaussian_smooth(values, params.smooth_sigma)
        np.clip(values, params.min_fov, params.default_fov, out=values)
    return FovCurve(values)


def _view_basis(direction: SphericalDirection) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-roll camera frame (forward, right, up) for a viewing direction."""
    fwd = dirs_to_vecs(np.array([direction.theta]), np.array([direction.phi]))[0]
    world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(world_up, fwd)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        # looking straight at a pole; fall back to the east direction at theta
        th = math.radians(direction.theta)
        right = np.array([math.cos(th), 0.0, -math.sin(th)])
    else:
        right = right / norm
    up = np.cross(fwd, right)
    return fwd, right, up


def _pixel_rays(
    direction: SphericalDirection, fov_deg: float, out_w: int, out_h: int
) -> np.ndarray:
    """(out_h, out_w, 3) unit rays through the pixel centers."""
    fwd, right, up = _view_basis(direction)
    focal = (out_w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    u = np.arange(out_w) + 0.5 - out_w / 2.0
    v = np.arange(out_h) + 0.5 - out_h / 2.0
    rays = (
        focal * fwd[None, None, :]
        + u[None, :, None] * right[None, None, :]
        - v[:, None, None] * up[None, None, :]
    )
    return rays / np.linalg.norm(rays, axis=2, keepdims=True)


def _check_fov(fov_deg: float):
    if not 0.0 < fov_deg < 180.0:
        raise InvalidFov(f"fov {fov_deg} outside (0, 180)")


def render_nfov(
    frame: np.ndarray,
    direction: SphericalDirection,
    fov_deg: float,
    out_w: int,
    out_h: int,
) -> np.ndarray:
    """Pinhole projection of an equirect frame, zero roll, bilinear sampling."""
    _check_fov(fov_deg)
    if out_w < 1 or out_h < 1:
        raise OutOfBounds("output size must be positive")
    if abs(direction.phi) > POLE_WARN_DEG:
        log.warning(
            "view direction %.1f deg from the equator; zero-roll frame is unstable",
            direction.phi,
        )
    h, w = frame.shape[:2]
    g = EquirectGeometry(w, h)
    rays = _pixel_rays(direction, fov_deg, out_w, out_h).reshape(-1, 3)
    th, ph = vecs_to_dirs(rays)
    x, y = dirs_to_points(th, ph, g)
    out = sample_equirect(frame, x, y)
    shape = (out_h, out_w) if frame.ndim == 2 else (out_h, out_w, frame.shape[2])
    out = out.reshape(shape)
    if np.issubdtype(frame.dtype, np.integer):
        info = np.iinfo(frame.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(frame.dtype)
    return out


def project_dirs_to_nfov(
    theta: np.ndarray,
    phi: np.ndarray,
    direction: SphericalDirection,
    fov_deg: float,
    out_w: int,
    out_h: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward projection of sphere directions into the NFOV image.

    Returns pixel coords (x, y) and an in-front mask; coords are only
    meaningful where the mask is True. Inverse of the render_nfov ray grid:
    projecting the ray of pixel (i, j) lands back on (i, j).
    """
    _check_fov(fov_deg)
    fwd, right, up = _view_basis(direction)
    focal = (out_w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    vecs = dirs_to_vecs(np.asarray(theta, dtype=np.float64), np.asarray(phi, dtype=np.float64))
    depth = vecs @ fwd
    front = depth > 1e-9
    safe = np.where(front, depth, 1.0)
    x = focal * (vecs @ right) / safe + out_w / 2.0 - 0.5
    y = -focal * (vecs @ up) / safe + out_h / 2.0 - 0.5
    return x, y, front


def warp_frame(image: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply a stabilizing transform by inverse projective mapping.

    Output pixel p receives image(B^-1 p); samples falling outside the source
    are black. The cropped border fraction is logged.
    """
    b = np.asarray(b, dtype=np.float64)
    if abs(float(np.linalg.det(b))) < 1e-12:
        raise SingularTransform("warp matrix is not invertible")
    inv = np.linalg.inv(b)
    h, w = image.shape[:2]
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    sw = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    bad = np.abs(sw) < 1e-12
    sw = np.where(bad, 1.0, sw)
    sx = np.where(bad, -1.0, sx / sw)
    sy = np.where(bad, -1.0, sy / sw)
    out, inside = sample_planar(image, sx, sy)
    cropped = 1.0 - float(inside.mean())
    if cropped > 0.0:
        log.debug("warp cropped %.1f%% of the frame border", 100.0 * cropped)
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(image.dtype)
    return out
