"""Synthetic articulated poses with exact camera projections.

Stands in for a motion-capture dataset: random joint angles drive forward
kinematics of a 17-joint human-like skeleton, the body is placed in front
of a pinhole camera, and the 2D pose is the exact projection.

Body frame conventions match the camera frame: +x right, +y down, +z away
from the camera. The rest pose is a planar "arms down" stance in the x-y
plane facing the camera.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import CameraIntrinsics, backproject_root, project

H36M_JOINTS = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
]  # fmt: skip


@dataclass
class SkeletonSpec:
    """Kinematic tree with per-joint Euler-angle limits (degrees, xyz order).

    ``offsets[j]`` is the rest-pose bone vector from ``parents[j]`` to ``j``;
    ``limits[j]`` is a (3, 2) array of [low, high] for the rotation applied
    at joint ``j`` to its own bone.
    """

    names: list[str]
    parents: list[int]
    offsets: np.ndarray  # (J, 3) mm
    limits: np.ndarray  # (J, 3, 2) degrees
    pairs: list[tuple[int, int]]
    root_index: int = 0
    root_yaw: tuple[float, float] = (-180.0, 180.0)
    root_tilt: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.limits = np.asarray(self.limits, dtype=np.float64)
        n = len(self.parents)
        if self.offsets.shape != (n, 3) or self.limits.shape != (n, 3, 2):
            raise ValueError("offsets/limits do not match the joint count")
        if self.parents[self.root_index] != -1:
            raise ValueError("root joint must have no parent")
        for j, p in enumerate(self.parents):
            if j == self.root_index:
                continue
            if not 0 <= p < j:
                raise ValueError("parents must precede children (topological order)")
            if np.linalg.norm(self.offsets[j]) <= 0:
                raise ValueError(f"bone length of joint {j} must be positive")
        if np.any(self.limits[..., 0] > self.limits[..., 1]):
            raise ValueError("angle limit with low > high")
        self._check_pairs()

    def _check_pairs(self) -> None:
        """Every off-midline joint of the rest pose must be paired with its mirror."""
        perm = flip_permutation(self.pairs, self.joint_count)
        rest = np.zeros((self.joint_count, 3))
        for j, p in enumerate(self.parents):
            if p >= 0:
                rest[j] = rest[p] + self.offsets[j]
        mirrored = rest[perm] * np.array([-1.0, 1.0, 1.0])
        bad = np.flatnonzero(np.linalg.norm(mirrored - rest, axis=1) > 1e-6)
        if bad.size:
            raise ValueError(
                f"left/right pairing incomplete or asymmetric at joints {bad.tolist()}"
            )

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=1)

    def flip_permutation(self) -> np.ndarray:
        return flip_permutation(self.pairs, self.joint_count)

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "parents": self.parents,
            "offsets": self.offsets.tolist(),
            "limits": self.limits.tolist(),
            "pairs": [list(p) for p in self.pairs],
            "root_index": self.root_index,
            "root_yaw": list(self.root_yaw),
            "root_tilt": list(self.root_tilt),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SkeletonSpec:
        return cls(
            names=list(d["names"]),
            parents=[int(p) for p in d["parents"]],
            offsets=np.asarray(d["offsets"]),
            limits=np.asarray(d["limits"]),
            pairs=[tuple(p) for p in d["pairs"]],
            root_index=int(d.get("root_index", 0)),
            root_yaw=tuple(d.get("root_yaw", (-180.0, 180.0))),
            root_tilt=tuple(d.get("root_tilt", (-10.0, 10.0))),
        )

    @classmethod
    def load(cls, path) -> SkeletonSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _mirror_limits(lim: np.ndarray) -> np.ndarray:
    # reflecting x negates rotations about y and z
    out = lim.copy()
    out[1:] = -lim[1:, ::-1]
    return out


def default_skeleton() -> SkeletonSpec:
    """Human3.6M-style 17-joint skeleton, pelvis root."""
    names = list(H36M_JOINTS)
    idx = {n: i for i, n in enumerate(names)}
    parents = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15]
    down, up = np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0])
    right = np.array([1.0, 0.0, 0.0])
    zero = np.zeros((3, 2))

    def lim(x=(0, 0), y=(0, 0), z=(0, 0)):
        return np.array([x, y, z], dtype=np.float64)

    # right-side bones and limits; the left side is the mirror image
    right_side = {
        # forward flexion is a negative x-rotation (toward -z)
        "r_hip": (130.0 * right, lim()),
        "r_knee": (450.0 * down, lim(x=(-95, 30), y=(-20, 20), z=(-10, 35))),
        "r_ankle": (450.0 * down, lim(x=(0, 130))),
        "r_shoulder": (150.0 * right, lim(z=(-10, 15))),
        "r_elbow": (280.0 * down, lim(x=(-150, 50), y=(-30, 30), z=(-5, 95))),
        "r_wrist": (250.0 * down, lim(x=(-140, 0), y=(-40, 40))),
    }
    offsets = np.zeros((17, 3))
    limits = np.zeros((17, 3, 2))
    for name, (off, lm) in right_side.items():
        mirror = "l_" + name[2:]
        offsets[idx[name]], limits[idx[name]] = off, lm
        offsets[idx[mirror]] = off * np.array([-1.0, 1.0, 1.0])
        limits[idx[mirror]] = _mirror_limits(lm)
    spine = {
        "spine": (230.0 * up, lim(x=(-30, 10), y=(-20, 20), z=(-15, 15))),
        "thorax": (250.0 * up, lim(x=(-15, 10), y=(-15, 15), z=(-10, 10))),
        "neck": (110.0 * up, lim(x=(-20, 20), y=(-30, 30), z=(-15, 15))),
        "head": (115.0 * up, lim(x=(-25, 25), y=(-10, 10), z=(-10, 10))),
    }
    for name, (off, lm) in spine.items():
        offsets[idx[name]], limits[idx[name]] = off, lm
    limits[0] = zero
    pairs = [(idx[a], idx[b]) for a, b in [
        ("r_hip", "l_hip"), ("r_knee", "l_knee"), ("r_ankle", "l_ankle"),
        ("r_shoulder", "l_shoulder"), ("r_elbow", "l_elbow"), ("r_wrist", "l_wrist"),
    ]]  # fmt: skip
    return SkeletonSpec(names, parents, offsets, limits, pairs)


def flip_permutation(pairs, joint_count: int) -> np.ndarray:
    perm = np.arange(joint_count)
    seen = set()
    for a, b in pairs:
        if a in seen or b in seen:
            raise ValueError(f"joint listed in more than one pair: {(a, b)}")
        seen.update((a, b))
        perm[a], perm[b] = b, a
    return perm


def sample_angles(spec: SkeletonSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform joint angles (J, 3) in degrees within the skeleton's joint limits."""
    lo, hi = spec.limits[..., 0], spec.limits[..., 1]
    return lo + (hi - lo) * rng.random(lo.shape)


def forward_kinematics(spec: SkeletonSpec, angles, root_rotation=None) -> np.ndarray:
    """Root-relative joint positions (J, 3) for Euler angles (J, 3) in degrees."""
    local = Rotation.from_euler("xyz", np.asarray(angles), degrees=True).as_matrix()
    glob = np.empty_like(local)
    pos = np.zeros((spec.joint_count, 3))
    root_rot = np.eye(3) if root_rotation is None else np.asarray(root_rotation)
    for j, p in enumerate(spec.parents):
        if p < 0:
            glob[j] = root_rot @ local[j]
            continue
        glob[j] = glob[p] @ local[j]
        pos[j] = pos[p] + glob[j] @ spec.offsets[j]
    return pos


def root_rotation(yaw: float, tilt_x: float, tilt_z: float) -> np.ndarray:
    """Body orientation: yaw about the vertical axis, then small tilts."""
    return Rotation.from_euler("yxz", [yaw, tilt_x, tilt_z], degrees=True).as_matrix()


@dataclass
class SceneSample:
    pose3d: np.ndarray  # (J, 3) mm, camera frame
    cam: CameraIntrinsics
    pose2d: np.ndarray  # (J, 2) px, exact projection
    root_index: int = 0

    @property
    def root(self) -> np.ndarray:
        return self.pose3d[self.root_index]

    @property
    def canonical_depth(self) -> float:
        return float(self.pose3d[self.root_index, 2] / self.cam.alpha)

    @property
    def relative(self) -> np.ndarray:
        return self.pose3d - self.pose3d[self.root_index]


@dataclass
class SynthConfig:
    depth_range: tuple[float, float] = (2000.0, 8000.0)
    alpha_range: tuple[float, float] = (1000.0, 1000.0)
    principal: tuple[float, float] = (512.0, 512.0)
    # root placement as a fraction of depth, i.e. a bound on |R_x / R_z|
    lateral: tuple[float, float] = (0.3, 0.2)
    min_joint_depth: float = 100.0


def _sample_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def place(
    relative: np.ndarray, root: np.ndarray, alpha: float, principal, root_index: int = 0
) -> SceneSample:
    pose3d = relative + root
    cam = CameraIntrinsics(float(alpha), float(principal[0]), float(principal[1]))
    return SceneSample(pose3d=pose3d, cam=cam, pose2d=project(pose3d, cam), root_index=root_index)


def generate(
    spec: SkeletonSpec,
    n: int,
    seed: int = 0,
    config: SynthConfig | None = None,
    posture: np.ndarray | None = None,
) -> list[SceneSample]:
    """Generate ``n`` scene samples; sample ``i`` uses RNG stream (seed, i).

    If ``posture`` (root-relative joints, camera frame) is given, every
    sample reuses it and only the root placement and focal length vary.
    """
    cfg = config or SynthConfig()
    lo, hi = cfg.depth_range
    if not (0 < lo <= hi and np.isfinite(hi)):
        raise ValueError(f"invalid depth range {cfg.depth_range}")
    if not 0 < cfg.alpha_range[0] <= cfg.alpha_range[1]:
        raise ValueError(f"invalid focal range {cfg.alpha_range}")
    samples = []
    for i in range(n):
        rng = _sample_rng(seed, i)
        if posture is None:
            rot = root_rotation(
                rng.uniform(*spec.root_yaw),
                rng.uniform(*spec.root_tilt),
                rng.uniform(*spec.root_tilt),
            )
            rel = forward_kinematics(spec, sample_angles(spec, rng), rot)
        else:
            rel = np.asarray(posture, dtype=np.float64)
        z = rng.uniform(lo, hi)
        x = z * rng.uniform(-cfg.lateral[0], cfg.lateral[0])
        y = z * rng.uniform(-cfg.lateral[1], cfg.lateral[1])
        alpha = rng.uniform(*cfg.alpha_range)
        root = np.array([x, y, z])
        if np.min(rel[:, 2] + z) < cfg.min_joint_depth:
            raise ValueError("depth range too small: joints would reach the camera plane")
        samples.append(place(rel, root, alpha, cfg.principal, spec.root_index))
    return samples


def flip(sample: SceneSample, perm) -> SceneSample:
    """Mirror horizontally about the principal axis and swap left/right joints.

    ``perm`` is a joint permutation (see ``flip_permutation``) or a pairing list.
    """
    j = sample.pose3d.shape[0]
    if not isinstance(perm, np.ndarray):
        perm = flip_permutation(perm, j)
    if perm.shape != (j,) or sorted(perm.tolist()) != list(range(j)):
        raise ValueError("pairing does not cover the skeleton")
    pose3d = sample.pose3d[perm] * np.array([-1.0, 1.0, 1.0])
    # reprojecting (rather than mirroring pixels) keeps flip an exact involution
    pose2d = project(pose3d, sample.cam)
    return SceneSample(pose3d=pose3d, cam=sample.cam, pose2d=pose2d, root_index=sample.root_index)


def flip_arrays(pose2d, pose3d, principal, perm):
    """Batch version of ``flip`` on ``(N, J, 2)`` / ``(N, J, 3)`` arrays."""
    pose2d = np.asarray(pose2d)[..., perm, :].copy()
    pose3d = np.asarray(pose3d)[..., perm, :] * np.array([-1.0, 1.0, 1.0])
    pose2d[..., 0] = 2.0 * np.asarray(principal)[..., None, 0] - pose2d[..., 0]
    return pose2d, pose3d


def stack(samples: list[SceneSample]) -> dict[str, np.ndarray]:
    """Collect samples into arrays for training and evaluation."""
    if not samples:
        raise ValueError("no samples")
    return {
        "pose2d": np.stack([s.pose2d for s in samples]),
        "pose3d": np.stack([s.pose3d for s in samples]),
        "principal": np.stack([s.cam.principal for s in samples]),
        "alpha": np.array([s.cam.alpha for s in samples]),
        "root_index": samples[0].root_index,
    }


def root_roundtrip_error(sample: SceneSample) -> float:
    """Relative error of recovering the root (X, Y) from its projection."""
    r = project(sample.root, sample.cam)
    xy = backproject_root(r, sample.canonical_depth, sample.cam)
    return float(np.linalg.norm(xy - sample.root[:2]) / np.linalg.norm(sample.root[:2]))
