"""SE(3) poses, pinhole intrinsics, projection and back-projection.

Conventions: right-handed, camera looks down +z, x right, y down. A camera
pose stored in a trajectory maps camera coordinates to world coordinates.
Points are plain float64 arrays of shape (3,) or (N, 3).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidRotation, NonPositiveDepth

ORTHO_TOL = 1e-9


def _orthonormality_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix via polar decomposition."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x -> R x + t.

    Construction rejects non-orthonormal matrices and reflections. Use
    :meth:`from_matrix` with ``orthonormalize=True`` for noisy input.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidRotation("pose contains non-finite values")
        if _orthonormality_error(R) > ORTHO_TOL:
            raise InvalidRotation("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise InvalidRotation("rotation is a reflection (det = -1)")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray, orthonormalize_rotation: bool = False) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        R = T[:3, :3]
        if orthonormalize_rotation:
            R = orthonormalize(R)
        return cls(R, T[:3, 3])

    @classmethod
    def from_quaternion(cls, q_xyzw, translation) -> "Pose":
        return cls(Rotation.from_quat(q_xyzw).as_matrix(), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0)) -> "Pose":
        """Camera-to-world pose of a camera at ``eye`` looking at ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(orthonormalize(np.column_stack([x, y, z])), eye)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def as_quaternion(self) -> np.ndarray:
        """Unit quaternion (x, y, z, w) with w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def inverse(self) -> "Pose":
        return invert(self)

    def apply(self, points) -> np.ndarray:
        return apply(self, points)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """Transform applying ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    if _orthonormality_error(R) > ORTHO_TOL:
        R = orthonormalize(R)
    return Pose(R, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def apply(p: Pose, points) -> np.ndarray:
    """R x + t for a single point (3,) or a stack (..., 3)."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ p.rotation.T + p.translation


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle in radians, accurate near zero."""
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 525.0
    fy: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    depth_scale: float = 5000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not self.depth_scale > 0:
            raise ValueError("depth_scale must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def downsampled(self, stride: int) -> "Intrinsics":
        """Intrinsics of the image subsampled as ``img[::stride, ::stride]``."""
        if stride == 1:
            return self
        return Intrinsics(
            self.fx / stride, self.fy / stride, self.cx / stride, self.cy / stride,
            (self.width + stride - 1) // stride, (self.height + stride - 1) // stride,
            self.depth_scale,
        )


def backproject(u: float, v: float, depth: float, intr: Intrinsics) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    return np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])


def project(pt, intr: Intrinsics) -> tuple[float, float] | None:
    """Pixel coordinates of ``pt``, or None when outside the view frustum."""
    x, y, z = (float(c) for c in pt)
    if not z > 0:
        return None
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (-0.5 <= u < intr.width - 0.5 and -0.5 <= v < intr.height - 0.5):
        return None
    return u, v


def backproject_depth(depth: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Per-pixel camera-frame points (H, W, 3); invalid pixels give zeros."""
    h, w = depth.shape
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)[:, None]
    z = np.where(depth > 0, depth, 0.0).astype(np.float64)
    pts = np.empty((h, w, 3))
    pts[..., 0] = (u - intr.cx) * z / intr.fx
    pts[..., 1] = (v - intr.cy) * z / intr.fy
    pts[..., 2] = z
    return pts


def project_points(points: np.ndarray, intr: Intrinsics):
    """Vectorized projection. Returns (uv (N, 2), in_frustum mask (N,))."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    u = intr.fx * pts[:, 0] / zs + intr.cx
    v = intr.fy * pts[:, 1] / zs + intr.cy
    ok &= (u >= -0.5) & (u < intr.width - 0.5) & (v >= -0.5) & (v < intr.height - 0.5)
    return np.stack([u, v], axis=1), ok


def pixel_rays(intr: Intrinsics) -> np.ndarray:
    """Unnormalized camera-frame ray directions (H, W, 3) with z = 1."""
    return backproject_depth(np.ones(intr.shape), intr)
