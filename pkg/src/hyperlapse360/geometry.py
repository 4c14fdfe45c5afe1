"""Spherical / equirectangular coordinate conventions and quaternion helpers.

Conventions, used by every other module:

  * longitude theta in degrees, east-positive, wrapped to [-180, 180)
  * latitude  phi   in degrees, up-positive, clamped to [-90, 90]
  * unit vectors:  x = cos(phi) sin(theta),  y = sin(phi),  z = cos(phi) cos(theta)
    so +z is forward, +x east, +y up
  * equirect pixel (x, y), 0-based, pixel centers:
        theta = (x + 0.5) / width  * 360 - 180
        phi   = 90 - (y + 0.5) / height * 180
    row 0 is the north edge, column 0 the theta = -180 edge
  * quaternions are (w, x, y, z), unit norm, canonicalized so w >= 0;
    quat_mul(a, b) applies b first then a (matrix order R(a) @ R(b))
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllWeightsZero, LengthMismatch, NonUnitVector, OutOfBounds

_UNIT_TOL = 1e-6


def wrap_longitude(theta: float) -> float:
    """Wrap a longitude in degrees into [-180, 180)."""
    t = math.fmod(theta + 180.0, 360.0)
    if t < 0.0:
        t += 360.0
    return t - 180.0


def clamp_latitude(phi: float) -> float:
    return min(90.0, max(-90.0, phi))


@dataclass(frozen=True)
class SphericalDirection:
    theta: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_longitude(float(self.theta)))
        object.__setattr__(self, "phi", clamp_latitude(float(self.phi)))


@dataclass(frozen=True)
class UnitVector3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(n - 1.0) > _UNIT_TOL:
            raise NonUnitVector(f"norm {n} deviates from 1 by more than {_UNIT_TOL}")
        object.__setattr__(self, "x", self.x / n)
        object.__setattr__(self, "y", self.y / n)
        object.__setattr__(self, "z", self.z / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(v) -> "UnitVector3":
        v = np.asarray(v, dtype=np.float64)
        n = float(np.linalg.norm(v))
        if n == 0.0:
            raise NonUnitVector("zero vector")
        v = v / n
        return UnitVector3(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < 1e-12:
            raise NonUnitVector("zero-norm quaternion")
        w, x, y, z = self.w / n, self.x / n, self.y / n, self.z / n
        # canonical sign: w >= 0, ties broken by the first nonzero component
        if w < 0.0 or (w == 0.0 and _first_nonzero_negative(x, y, z)):
            w, x, y, z = -w, -x, -y, -z
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_array(q) -> "UnitQuaternion":
        q = np.asarray(q, dtype=np.float64)
        return UnitQuaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))


def _first_nonzero_negative(*components: float) -> bool:
    for c in components:
        if c != 0.0:
            return c < 0.0
    return False


@dataclass(frozen=True)
class EquirectGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise OutOfBounds(f"non-positive grid {self.width}x{self.height}")
        if self.width != 2 * self.height:
            raise OutOfBounds(f"equirect grid must be 2:1, got {self.width}x{self.height}")


# direction <-> vector


def dir_to_vec(d: SphericalDirection) -> UnitVector3:
    th = math.radians(d.theta)
    ph = math.radians(d.phi)
    cp = math.cos(ph)
    return UnitVector3(cp * math.sin(th), math.sin(ph), cp * math.cos(th))


def vec_to_dir(v: UnitVector3) -> SphericalDirection:
    phi = math.degrees(math.asin(min(1.0, max(-1.0, v.y))))
    if abs(abs(v.y) - 1.0) < 1e-12:
        # at the poles longitude is undefined; fix it to 0
        return SphericalDirection(0.0, phi)
    theta = math.degrees(math.atan2(v.x, v.z))
    return SphericalDirection(theta, phi)


def dirs_to_vecs(theta_deg: np.ndarray, phi_deg: np.ndarray) -> np.ndarray:
    """Vectorized dir_to_vec; returns (..., 3)."""
    th = np.radians(theta_deg)
    ph = np.radians(phi_deg)
    cp = np.cos(ph)
    return np.stack([cp * np.sin(th), np.sin(ph), cp * np.cos(th)], axis=-1)


def vecs_to_dirs(vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized vec_to_dir for unit vectors of shape (..., 3); degrees."""
    y = np.clip(vecs[..., 1], -1.0, 1.0)
    phi = np.degrees(np.arcsin(y))
    theta = np.degrees(np.arctan2(vecs[..., 0], vecs[..., 2]))
    theta = np.where(np.abs(y) >= 1.0 - 1e-12, 0.0, theta)
    return theta, phi


# pixel <-> direction


def pixel_to_dir(x: int, y: int, g: EquirectGeometry) -> SphericalDirection:
    """Direction of the center of integer pixel (x, y). Non-integer input is rejected."""
    if not (isinstance(x, (int, np.integer)) and isinstance(y, (int, np.integer))):
        raise OutOfBounds(f"pixel indices must be integers, got ({x!r}, {y!r})")
    if not (0 <= x < g.width and 0 <= y < g.height):
        raise OutOfBounds(f"pixel ({x}, {y}) outside {g.width}x{g.height}")
    return point_to_dir(float(x), float(y), g)


def point_to_dir(x: float, y: float, g: EquirectGeometry) -> SphericalDirection:
    """Continuous inverse of dir_to_pixel; (x, y) in pixel-center coordinates."""
    theta = (x + 0.5) / g.width * 360.0 - 180.0
    phi = 90.0 - (y + 0.5) / g.height * 180.0
    return SphericalDirection(theta, phi)


def dir_to_pixel(d: SphericalDirection, g: EquirectGeometry) -> tuple[float, float]:
    """Continuous pixel coordinates of a direction; integer values mean pixel centers."""
    x = (d.theta + 180.0) / 360.0 * g.width - 0.5
    y = (90.0 - d.phi) / 180.0 * g.height - 0.5
    return x, y


def points_to_dirs(x: np.ndarray, y: np.ndarray, g: EquirectGeometry) -> tuple[np.ndarray, np.ndarray]:
    theta = (np.asarray(x, dtype=np.float64) + 0.5) / g.width * 360.0 - 180.0
    phi = 90.0 - (np.asarray(y, dtype=np.float64) + 0.5) / g.height * 180.0
    theta = np.mod(theta + 180.0, 360.0) - 180.0
    return theta, np.clip(phi, -90.0, 90.0)


def dirs_to_points(theta: np.ndarray, phi: np.ndarray, g: EquirectGeometry) -> tuple[np.ndarray, np.ndarray]:
    theta = np.mod(np.asarray(theta, dtype=np.float64) + 180.0, 360.0) - 180.0
    x = (theta + 180.0) / 360.0 * g.width - 0.5
    y = (90.0 - np.asarray(phi, dtype=np.float64)) / 180.0 * g.height - 0.5
    return x, y


# quaternion algebra


def quat_mul(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product a*b: the rotation that applies b first, then a."""
    w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z
    x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y
    y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x
    z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w
    return UnitQuaternion(w, x, y, z)


def quat_inverse(q: UnitQuaternion) -> UnitQuaternion:
    return UnitQuaternion(q.w, -q.x, -q.y, -q.z)


def quat_angle(q: UnitQuaternion) -> float:
    """Rotation angle in degrees, in [0, 180] thanks to the w >= 0 canonical form."""
    w = min(1.0, max(-1.0, q.w))
    return math.degrees(2.0 * math.acos(w))


def quat_from_axis_angle(axis, angle_deg: float) -> UnitQuaternion:
    v = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise NonUnitVector("zero rotation axis")
    v = v / n
    h = math.radians(angle_deg) / 2.0
    s = math.sin(h)
    return UnitQuaternion(math.cos(h), v[0] * s, v[1] * s, v[2] * s)


def quat_to_matrix(q: UnitQuaternion) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def quat_rotate(q: UnitQuaternion, v: UnitVector3) -> UnitVector3:
    r = quat_to_matrix(q) @ v.as_array()
    return UnitVector3.from_array(r)


def slerp(q0: UnitQuaternion, q1: UnitQuaternion, t: float) -> UnitQuaternion:
    """Spherical linear interpolation along the shorter arc; t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise OutOfBounds(f"slerp parameter {t} outside [0, 1]")
    a = q0.as_array()
    b = q1.as_array()
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    dot = min(1.0, dot)
    if dot > 1.0 - 1e-12:
        # nearly identical: renormalized lerp is exact to first order
        return UnitQuaternion.from_array(a + t * (b - a))
    omega = math.acos(dot)
    so = math.sin(omega)
    out = (math.sin((1.0 - t) * omega) / so) * a + (math.sin(t * omega) / so) * b
    return UnitQuaternion.from_array(out)


def quat_weighted_blend(quats: list[UnitQuaternion], weights) -> UnitQuaternion:
    """Normalized weighted sum of sign-aligned quaternions.

    Weights must be nonnegative with a positive total. Quaternions are aligned
    to the hemisphere of the highest-weight element before summing, which makes
    the blend independent of input sign flips.
    """
    if len(quats) == 0:
        raise AllWeightsZero("no quaternions to blend")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(quats),):
        raise LengthMismatch(f"{len(quats)} quaternions vs weights shape {w.shape}")
    if np.any(w < 0.0):
        raise OutOfBounds("negative blend weight")
    if not np.any(w > 0.0):
        raise AllWeightsZero("all blend weights are zero")
    ref = quats[int(np.argmax(w))].as_array()
    acc = np.zeros(4, dtype=np.float64)
    for q, wi in zip(quats, w):
        if wi == 0.0:
            continue
        arr = q.as_array()
        if float(np.dot(arr, ref)) < 0.0:
            arr = -arr
        acc += wi * arr
    n = float(np.linalg.norm(acc))
    if n < 1e-12:
        raise AllWeightsZero("blend cancelled to zero; inputs too far apart")
    return UnitQuaternion.from_array(acc)


def angle_between_dirs(a: SphericalDirection, b: SphericalDirection) -> float:
    """Great-circle angle between two directions, degrees."""
    va = dir_to_vec(a).as_array()
    vb = dir_to_vec(b).as_array()
    return math.degrees(math.acos(min(1.0, max(-1.0, float(np.dot(va, vb))))))
