"""Pinhole camera model and rigid transforms between camera, robot and map frames.

Frame conventions:

* camera: +z along the optical axis, +x right, +y down
* robot:  +x forward, +y left, +z up; the 2D pose embeds with z = 0
* map:    ground plane is z = 0, +z up
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidDepth

_ORTHO_TOL = 1e-9


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    fx: float = 320.0
    fy: float = 240.0 / math.tan(math.radians(29.0))
    cx: float = 320.0
    cy: float = 240.0
    depth_min: float = 0.2
    depth_max: float = 8.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError("need 0 < depth_min < depth_max")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float, vfov_deg: float, **kw) -> "CameraModel":
        """Intrinsics of an ideal pinhole with the given full fields of view."""
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
        return cls(width=width, height=height, fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0, **kw)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_bounds(self, u: float, v: float) -> bool:
        return 0 <= u <= self.width - 1 and 0 <= v <= self.height - 1

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("width", "height", "fx", "fy", "cx", "cy", "depth_min", "depth_max")}


@dataclass(frozen=True)
class RobotPose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def as_transform(self) -> "RigidTransform3":
        """SE(3) embedding of the planar pose (z = 0, yaw only)."""
        return RigidTransform3(rot_z(self.theta), np.array([self.x, self.y, 0.0]))


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


@dataclass(frozen=True)
class RigidTransform3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("transform must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or np.linalg.det(r) <= 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform3":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform3":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform3":
        rt = self.rotation.T
        return RigidTransform3(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform3") -> "RigidTransform3":
        return compose(self, other)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform3):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def apply_transform(T: RigidTransform3, p) -> np.ndarray:
    """R p + t for a single point (3,) or a batch of points (N, 3)."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return T.rotation @ p + T.translation
    return p @ T.rotation.T + T.translation


def compose(A: RigidTransform3, B: RigidTransform3) -> RigidTransform3:
    """Transform equivalent to applying B first, then A."""
    r = A.rotation @ B.rotation
    if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
        r = _orthonormalize(r)
    return RigidTransform3(r, A.rotation @ B.translation + A.translation)


# Columns are the camera axes expressed in the robot frame:
# optical axis -> forward, image right -> -left, image down -> -up.
CAMERA_TO_ROBOT_ROTATION = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def camera_mount(height: float = 0.3, forward: float = 0.0, pitch: float = 0.0) -> RigidTransform3:
    """Camera-in-robot transform for a forward-looking camera.

    ``pitch`` tilts the optical axis down (positive) about the robot's y axis.
    """
    r = rot_y(pitch) @ CAMERA_TO_ROBOT_ROTATION
    return RigidTransform3(r, np.array([forward, 0.0, height]))


def camera_pose_in_map(pose: RobotPose2D, cam_in_robot: RigidTransform3) -> RigidTransform3:
    return compose(pose.as_transform(), cam_in_robot)


def back_project(pixel, depth: float, cam: CameraModel) -> np.ndarray:
    """Camera-frame 3D point seen at ``pixel`` with z-depth ``depth``."""
    u, v = float(pixel[0]), float(pixel[1])
    if not cam.in_bounds(u, v):
        raise ValueError(f"pixel ({u}, {v}) outside the image")
    if not math.isfinite(depth) or not (cam.depth_min <= depth <= cam.depth_max):
        raise InvalidDepth(f"depth {depth} outside [{cam.depth_min}, {cam.depth_max}]")
    return np.array([(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth])


def back_project_many(us: np.ndarray, vs: np.ndarray, depths: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorised back_project without validation; returns (N, 3)."""
    depths = np.asarray(depths, dtype=float)
    x = (np.asarray(us, dtype=float) - cam.cx) * depths / cam.fx
    y = (np.asarray(vs, dtype=float) - cam.cy) * depths / cam.fy
    return np.column_stack([x, y, depths])


def project_point(p, cam: CameraModel) -> np.ndarray:
    x, y, z = (float(c) for c in p)
    if z <= 0:
        raise BehindCamera(f"point has z = {z}")
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])


def object_to_map(p_o, pose: RobotPose2D, cam_in_robot: RigidTransform3) -> np.ndarray:
    """Map-frame position of a camera-frame point seen from ``pose``."""
    return apply_transform(camera_pose_in_map(pose, cam_in_robot), p_o)
