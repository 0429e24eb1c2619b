"""Pinhole camera geometry and absolute/relative pose composition.

Units throughout: camera-frame coordinates in millimeters, image
coordinates in pixels, canonical depth in mm/px.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    """Square-pixel pinhole camera.

    ``alpha`` is the focal length in pixels (physical focal length times
    pixel density); ``cx``, ``cy`` is the principal point. Fields may also
    be arrays, one camera per point, for batched projection.
    """

    alpha: float
    cx: float
    cy: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha)
        if not np.all(np.isfinite(alpha) & (alpha > 0)):
            raise ValueError(f"focal length must be positive, got {self.alpha}")
        if not (np.all(np.isfinite(self.cx)) and np.all(np.isfinite(self.cy))):
            raise ValueError("principal point must be finite")

    @property
    def principal(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.cx, self.cy), axis=-1).astype(np.float64)


@dataclass
class Pose3D:
    joints: np.ndarray  # (J, 3) mm, camera frame
    root_index: int = 0

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise ValueError(f"expected (J, 3) joints, got {self.joints.shape}")
        if self.joints.shape[0] < 2:
            raise ValueError("a pose needs at least two joints")
        if not 0 <= self.root_index < self.joints.shape[0]:
            raise ValueError(f"root_index {self.root_index} out of range")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("pose contains non-finite coordinates")

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]


@dataclass
class AbsolutePose:
    root: np.ndarray  # (3,) mm
    relative: np.ndarray  # (J, 3) mm, zero at root_index
    root_index: int = 0


def project(points, cam: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points ``(..., 3)`` to pixels ``(..., 2)``.

    Raises ``ValueError`` for any point with non-positive depth.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= 0):
        raise ValueError("cannot project a point at or behind the camera plane")
    x = cam.alpha * points[..., 0] / z + cam.cx
    y = cam.alpha * points[..., 1] / z + cam.cy
    return np.stack([x, y], axis=-1)


def canonical_depth(depth, alpha) -> np.ndarray | float:
    """Root depth divided by focal length (mm/px)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("focal length must be positive")
    out = np.asarray(depth, dtype=np.float64) / alpha
    return float(out) if out.ndim == 0 else out


def backproject_root(r, depth, principal) -> np.ndarray:
    """Recover the root's (X, Y) from its pixel location and canonical depth.

    No focal length is needed: X = (r_x - c_x) * depth, Y = (r_y - c_y) * depth.
    ``principal`` may be a ``CameraIntrinsics`` or an ``(..., 2)`` array.
    """
    if isinstance(principal, CameraIntrinsics):
        principal = principal.principal
    r = np.asarray(r, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    return (r - np.asarray(principal, dtype=np.float64)) * depth[..., None]


def absolute_depth(depth, alpha) -> np.ndarray | float:
    """Promote canonical depth to metric root depth."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("focal length must be positive")
    out = alpha * np.asarray(depth, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


def absolute_root(r, depth, cam: CameraIntrinsics) -> np.ndarray:
    """Full root coordinates (X, Y, Z) from the root pixel and canonical depth."""
    xy = backproject_root(r, depth, cam)
    z = absolute_depth(depth, cam.alpha)
    return np.concatenate([xy, np.asarray(z)[..., None]], axis=-1)


def decompose(pose: Pose3D) -> AbsolutePose:
    """Split a pose into root coordinates and root-relative offsets.

    ``compose(decompose(p))`` is bit-exact whenever every difference
    ``joint - root`` is representable (e.g. coordinates on a common dyadic
    grid). Otherwise it is exact to within one ulp of the larger operand.
    """
    root = pose.joints[pose.root_index].copy()
    relative = pose.joints - root
    relative[pose.root_index] = 0.0
    return AbsolutePose(root=root, relative=relative, root_index=pose.root_index)


def compose(pose: AbsolutePose) -> Pose3D:
    joints = pose.root + pose.relative
    joints[pose.root_index] = pose.root
    return Pose3D(joints=joints, root_index=pose.root_index)
