"""
Core Geometry Module

SE(3) algebra on rotation matrices, yaw-only cuboids, pinhole projection and
the 2D / 3D intersection-over-union primitives shared by every other module.
All values are immutable and every function here is pure.

Twists are ordered (omega, v): rotation first, translation second.

Author: LunaLynx12
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.transform import Rotation
from errors import AngleNearPi, NotVisible
from dataclasses import dataclass, field
from typing import Iterable, Tuple
import numpy as np
import config
import math


SMALL_ANGLE = 1e-6
"""
Below this rotation angle exp/log switch to Taylor expansions.
"""

NEAR_PI = math.pi - 1e-6
"""
se3_log refuses rotations at or beyond this angle.
"""

MIN_DEPTH = 0.01
"""
Cuboid corners closer than this (in meters along the optical axis) are not projected.
"""

CAMERA_FROM_BODY = np.array([[0.0, -1.0, 0.0],
                             [0.0, 0.0, -1.0],
                             [1.0, 0.0, 0.0]])
"""
Rotation from a z-up, x-forward body frame to the optical frame (z forward, y down).
"""


def skew(v: np.ndarray) -> np.ndarray:
    """
    Skew-symmetric matrices for one 3-vector or a stack of them.

    param v: Vector(s) of shape (3,) or (N, 3)
    type v: np.ndarray
    return: Matrix of shape (3, 3) or (N, 3, 3)
    rtype: np.ndarray
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(R: np.ndarray) -> float:
    """
    Heading of the x axis of R projected onto the ground plane.
    """
    return math.atan2(R[1, 0], R[0, 0])


def wrap_angle(angle: float) -> float:
    """
    Wraps an angle into [-pi, pi).
    """
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    if np.abs(R @ R.T - np.eye(3)).max() <= 1e-12:
        return R
    U, _, Vt = np.linalg.svd(R)
    fixed = U @ Vt
    if np.linalg.det(fixed) < 0:
        U[:, -1] *= -1
        fixed = U @ Vt
    return fixed


@dataclass(frozen=True, eq=False)
class Pose:
    """
    Rigid transform x -> R @ x + t.

    Attributes:
        R (np.ndarray): 3x3 rotation matrix
        t (np.ndarray): Translation in meters
    """
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(np.eye(3), np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Pose":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "Pose":
        return pose_inverse(self)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """
        Transforms points of shape (3,) or (N, 3).
        """
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(Rotation.from_matrix(self.R).as_rotvec()))

    def is_close(self, other: "Pose", tol: float = 1e-9) -> bool:
        return bool(np.abs(self.R - other.R).max() <= tol and np.abs(self.t - other.t).max() <= tol)

    def __matmul__(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    def __repr__(self) -> str:
        return f"Pose(t={np.round(self.t, 6).tolist()}, yaw={math.degrees(yaw_of(self.R)):.3f}deg)"


def pose_compose(a: Pose, b: Pose) -> Pose:
    """
    Composes two poses so that the result applies b first, then a.

    param a: Outer transform
    type a: Pose
    param b: Inner transform
    type b: Pose
    return: a * b, with the rotation re-orthonormalized if it drifted
    rtype: Pose
    """
    return Pose(_orthonormalize(a.R @ b.R), a.R @ b.t + a.t)


def pose_inverse(a: Pose) -> Pose:
    Rt = a.R.T
    return Pose(Rt, -(Rt @ a.t))


def exp_batch(xi: np.ndarray) -> np.ndarray:
    """
    Vectorized SE(3) exponential.

    param xi: Twists of shape (N, 6), ordered (omega, v)
    type xi: np.ndarray
    return: Homogeneous transforms of shape (N, 4, 4)
    rtype: np.ndarray
    """
    xi = np.asarray(xi, dtype=float).reshape(-1, 6)
    omega, v = xi[:, :3], xi[:, 3:]
    theta = np.linalg.norm(omega, axis=1)
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    th2 = theta * theta

    a = np.where(small, 1.0 - th2 / 6.0, np.sin(th) / th)
    b = np.where(small, 0.5 - th2 / 24.0, 2.0 * np.sin(th / 2.0) ** 2 / th ** 2)
    c = np.where(small, 1.0 / 6.0 - th2 / 120.0, (th - np.sin(th)) / th ** 3)

    W = skew(omega)
    W2 = W @ W
    eye = np.eye(3)
    R = eye + a[:, None, None] * W + b[:, None, None] * W2
    V = eye + b[:, None, None] * W + c[:, None, None] * W2

    out = np.zeros((xi.shape[0], 4, 4))
    out[:, :3, :3] = R
    out[:, :3, 3] = np.einsum("nij,nj->ni", V, v)
    out[:, 3, 3] = 1.0
    return out


def log_batch(T: np.ndarray) -> np.ndarray:
    """
    Vectorized SE(3) logarithm.

    param T: Homogeneous transforms of shape (N, 4, 4)
    type T: np.ndarray
    return: Twists of shape (N, 6), ordered (omega, v)
    rtype: np.ndarray
    raises AngleNearPi: If any rotation angle is at least pi - 1e-6
    """
    T = np.asarray(T, dtype=float).reshape(-1, 4, 4)
    omega = Rotation.from_matrix(T[:, :3, :3]).as_rotvec()
    theta = np.linalg.norm(omega, axis=1)
    if np.any(theta >= NEAR_PI):
        raise AngleNearPi(f"rotation angle {float(theta.max()):.9f} rad is too close to pi for se3_log")

    small = theta < SMALL_ANGLE
    half = np.where(small, 1.0, theta / 2.0)
    th2 = np.where(small, 1.0, theta * theta)
    coef = np.where(small,
                    1.0 / 12.0 + theta * theta / 720.0,
                    (1.0 - half * np.cos(half) / np.sin(half)) / th2)

    W = skew(omega)
    V_inv = np.eye(3) - 0.5 * W + coef[:, None, None] * (W @ W)
    v = np.einsum("nij,nj->ni", V_inv, T[:, :3, 3])
    return np.concatenate([omega, v], axis=1)


def se3_exp(xi: np.ndarray) -> Pose:
    """
    Maps a twist (omega, v) onto SE(3).

    param xi: 6-vector twist
    type xi: np.ndarray
    return: Pose exp(xi)
    rtype: Pose
    """
    return Pose.from_matrix(exp_batch(xi)[0])


def se3_log(p: Pose) -> np.ndarray:
    """
    Maps a pose to its twist (omega, v).

    param p: Pose with rotation angle below pi - 1e-6
    type p: Pose
    return: 6-vector twist
    rtype: np.ndarray
    raises AngleNearPi: If the rotation angle is too close to pi
    """
    return log_batch(p.matrix())[0]


class CameraIntrinsics(BaseModel):
    """
    Pinhole camera model.

    Attributes:
        fx, fy (float): Focal lengths in pixels
        cx, cy (float): Principal point in pixels
        width, height (int): Image size in pixels
    """
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)

    @model_validator(mode='after')
    def check_principal_point(self) -> 'CameraIntrinsics':
        if not 0 < self.cx < self.width:
            raise ValueError(f"cx={self.cx} must lie inside (0, {self.width})")
        if not 0 < self.cy < self.height:
            raise ValueError(f"cy={self.cy} must lie inside (0, {self.height})")
        return self

    @classmethod
    def default(cls) -> 'CameraIntrinsics':
        """
        1280x720 camera with a 110 degree horizontal field of view.
        """
        return cls(fx=config.FOCAL_LENGTH, fy=config.FOCAL_LENGTH,
                   cx=config.IMAGE_WIDTH / 2, cy=config.IMAGE_HEIGHT / 2,
                   width=config.IMAGE_WIDTH, height=config.IMAGE_HEIGHT)


@dataclass(frozen=True, eq=False)
class BBox2D:
    """
    Axis-aligned image box, (ul, vl) left-top and (ur, vr) right-bottom, in pixels.
    """
    ul: float
    vl: float
    ur: float
    vr: float

    def __post_init__(self):
        if not (self.ul < self.ur and self.vl < self.vr):
            raise ValueError(f"degenerate box [{self.ul}, {self.vl}, {self.ur}, {self.vr}]")

    @property
    def area(self) -> float:
        return (self.ur - self.ul) * (self.vr - self.vl)

    def as_list(self) -> list:
        return [self.ul, self.vl, self.ur, self.vr]


@dataclass(frozen=True, eq=False)
class Cuboid:
    """
    Yaw-only 3D box resting in the world frame.

    Attributes:
        t (np.ndarray): Center position in meters
        yaw (float): Heading in radians, wrapped into [-pi, pi)
        dims (np.ndarray): Extent along the box axes (dx, dy, dz) in meters
    """
    t: np.ndarray
    yaw: float
    dims: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(3)
        dims = np.array(self.dims, dtype=float).reshape(3)
        if np.any(dims <= 0):
            raise ValueError(f"cuboid dims must be positive, got {dims.tolist()}")
        t.flags.writeable = False
        dims.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def from_pose(cls, pose: Pose, dims: Iterable[float]) -> "Cuboid":
        return cls(pose.t, yaw_of(pose.R), np.asarray(dims, dtype=float))

    @property
    def pose(self) -> Pose:
        return Pose(rot_z(self.yaw), self.t)

    def ground_polygon(self) -> np.ndarray:
        """
        Footprint corners (4, 2), counter-clockwise.
        """
        hx, hy = self.dims[0] / 2.0, self.dims[1] / 2.0
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return local @ np.array([[c, s], [-s, c]]) + self.t[:2]

    def z_range(self) -> Tuple[float, float]:
        return self.t[2] - self.dims[2] / 2.0, self.t[2] + self.dims[2] / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))


def box_corners(dims: np.ndarray) -> np.ndarray:
    """
    The 8 corners (8, 3) of a box of the given dims centered on its own origin.
    """
    signs = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=float)
    return signs * (np.asarray(dims, dtype=float) / 2.0)


def project_box(T_co: Pose, dims: np.ndarray, k: CameraIntrinsics) -> BBox2D:
    """
    Projects the 8 corners of a box given in the camera frame and returns their
    pixel extent clamped to the image.

    param T_co: Box pose in the camera (optical) frame
    type T_co: Pose
    param dims: Box dimensions in meters
    type dims: np.ndarray
    param k: Camera intrinsics
    type k: CameraIntrinsics
    return: Image-clamped bounding box
    rtype: BBox2D
    raises NotVisible: If no corner is in front of the camera or the clamped box is empty
    """
    pts = T_co.apply(box_corners(dims))
    pts = pts[pts[:, 2] > MIN_DEPTH]
    if len(pts) == 0:
        raise NotVisible("all cuboid corners are behind the camera")

    u = k.fx * pts[:, 0] / pts[:, 2] + k.cx
    v = k.fy * pts[:, 1] / pts[:, 2] + k.cy
    ul, ur = np.clip([u.min(), u.max()], 0.0, k.width)
    vl, vr = np.clip([v.min(), v.max()], 0.0, k.height)
    if ur <= ul or vr <= vl:
        raise NotVisible("cuboid projects outside the image")
    return BBox2D(float(ul), float(vl), float(ur), float(vr))


def predict_bbox(c: Cuboid, T_cw: Pose, k: CameraIntrinsics) -> BBox2D:
    """
    Predicted image box of a world cuboid seen from a camera.

    param c: Cuboid in the world frame
    type c: Cuboid
    param T_cw: Camera-from-world transform
    type T_cw: Pose
    param k: Camera intrinsics
    type k: CameraIntrinsics
    return: Image-clamped bounding box
    rtype: BBox2D
    raises NotVisible: If the cuboid is entirely behind the camera or off-image
    """
    return project_box(T_cw @ c.pose, c.dims, k)


def iou_2d(a: BBox2D, b: BBox2D) -> float:
    iw = min(a.ur, b.ur) - max(a.ul, b.ul)
    ih = min(a.vr, b.vr) - max(a.vl, b.vl)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(inter / (a.area + b.area - inter))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """
    Sutherland-Hodgman clipping of a convex polygon by a convex CCW polygon.
    """
    output = subject
    for i in range(len(clip)):
        if len(output) == 0:
            break
        a, b = clip[i], clip[(i + 1) % len(clip)]
        edge = b - a
        dist = edge[0] * (output[:, 1] - a[1]) - edge[1] * (output[:, 0] - a[0])
        kept = []
        for j in range(len(output)):
            prev, cur = output[j - 1], output[j]
            dp, dc = dist[j - 1], dist[j]
            if dc >= 0:
                if dp < 0:
                    kept.append(prev + (cur - prev) * (dp / (dp - dc)))
                kept.append(cur)
            elif dp >= 0:
                kept.append(prev + (cur - prev) * (dp / (dp - dc)))
        output = np.array(kept).reshape(-1, 2)
    return output


def polygon_area(poly: np.ndarray) -> float:
    """
    Shoelace area of a simple polygon (N, 2).
    """
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def iou_3d(a: Cuboid, b: Cuboid) -> float:
    """
    Exact volumetric IoU of two yaw-only cuboids: footprint intersection area
    times vertical overlap, over the union volume.

    param a: First cuboid
    type a: Cuboid
    param b: Second cuboid
    type b: Cuboid
    return: IoU in [0, 1]
    rtype: float
    """
    if np.array_equal(a.t, b.t) and np.array_equal(a.dims, b.dims) and a.yaw == b.yaw:
        return 1.0
    reach = 0.5 * (np.hypot(a.dims[0], a.dims[1]) + np.hypot(b.dims[0], b.dims[1]))
    if np.hypot(*(a.t[:2] - b.t[:2])) > reach:
        return 0.0

    a_lo, a_hi = a.z_range()
    b_lo, b_hi = b.z_range()
    height = min(a_hi, b_hi) - max(a_lo, b_lo)
    if height <= 0:
        return 0.0

    area = polygon_area(_clip_polygon(a.ground_polygon(), b.ground_polygon()))
    inter = area * height
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def translation_distance(a: Pose, b: Pose) -> float:
    """
    Distance between two frame origins, i.e. the norm of the translation of inverse(a) * b.
    """
    return float(np.linalg.norm(b.t - a.t))


def rotation_distance(a: Pose, b: Pose) -> float:
    """
    Angle in radians of the relative rotation between two poses.
    """
    return float(np.linalg.norm(Rotation.from_matrix(a.R.T @ b.R).as_rotvec()))


def camera_pose(x: float, y: float, heading: float, height: float = config.CAMERA_HEIGHT) -> Pose:
    """
    World-from-camera pose of a level camera at (x, y, height) looking along heading.
    """
    return Pose(rot_z(heading) @ CAMERA_FROM_BODY.T, np.array([x, y, height]))


def object_in_camera(t_co: np.ndarray, yaw_co: float) -> Pose:
    """
    Object pose in the optical frame of a level camera, yaw measured relative to the camera heading.
    """
    return Pose(CAMERA_FROM_BODY @ rot_z(yaw_co), np.asarray(t_co, dtype=float))
