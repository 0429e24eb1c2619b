"""3D pose evaluation metrics.

Poses are arrays of shape ``(J, 3)`` or batches ``(N, J, 3)`` in mm.
Batch metrics average over every joint of every sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PCK_THRESHOLD = 150.0
AUC_GRID = np.arange(5.0, 150.0 + 1e-9, 5.0)


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray  # (3, 3), det +1
    translation: np.ndarray  # (3,)

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.shape[-1] != 3:
        raise ValueError("poses must have 3D joints")
    return pred, gt


def root_align(pose, root_index: int = 0) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    return pose - pose[..., root_index : root_index + 1, :]


def joint_errors(pred, gt, root_index: int = 0) -> np.ndarray:
    """Per-joint Euclidean distances after root alignment, shape ``(..., J)``."""
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(root_align(pred, root_index) - root_align(gt, root_index), axis=-1)


def mpjpe(pred, gt, root_index: int = 0) -> float:
    """Mean per-joint position error after aligning roots (root counts as 0)."""
    return float(np.mean(joint_errors(pred, gt, root_index)))


def procrustes_align(pred, gt, allow_scale: bool = True) -> tuple[SimilarityTransform, np.ndarray]:
    """Least-squares similarity transform taking ``pred`` onto ``gt``.

    Solves min sum ||s R pred_i + t - gt_i||^2 over proper rotations via the
    SVD of the centered cross-covariance; reflections are excluded by
    flipping the weakest singular direction when needed.
    """
    pred, gt = _check_pair(pred, gt)
    if pred.ndim != 2:
        raise ValueError("procrustes_align works on a single (J, 3) pose")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    x, y = pred - mu_p, gt - mu_g
    # rank check on both clouds; tolerance relative to their spread
    for name, cloud in (("pred", x), ("gt", y)):
        sv = np.linalg.svd(cloud, compute_uv=False)
        if sv[0] == 0 or sv[1] <= 1e-12 * sv[0]:
            raise ValueError(f"degenerate {name} point set (collinear or coincident)")
    cov = y.T @ x
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    fix = np.array([1.0, 1.0, d])
    rot = (u * fix) @ vt
    if allow_scale:
        scale = float(np.sum(s * fix) / np.sum(x**2))
    else:
        scale = 1.0
    trans = mu_g - scale * rot @ mu_p
    tf = SimilarityTransform(scale, rot, trans)
    return tf, tf.apply(pred)


def pa_mpjpe(pred, gt, allow_scale: bool = True) -> float:
    """Mean joint distance after Procrustes alignment, averaged over samples."""
    pred, gt = _check_pair(pred, gt)
    if pred.ndim == 2:
        _, aligned = procrustes_align(pred, gt, allow_scale)
        return float(np.mean(np.linalg.norm(aligned - gt, axis=-1)))
    errs = [pa_mpjpe(p, g, allow_scale) for p, g in zip(pred, gt)]
    return float(np.mean(errs))


def mrpe(pred_roots, gt_roots) -> tuple[float, np.ndarray]:
    """Mean root position error and its per-axis mean absolute components."""
    pred_roots = np.atleast_2d(np.asarray(pred_roots, dtype=np.float64))
    gt_roots = np.atleast_2d(np.asarray(gt_roots, dtype=np.float64))
    if pred_roots.shape != gt_roots.shape:
        raise ValueError(f"length mismatch: {pred_roots.shape} vs {gt_roots.shape}")
    diff = pred_roots - gt_roots
    return float(np.mean(np.linalg.norm(diff, axis=-1))), np.mean(np.abs(diff), axis=0)


def pck3d(pred, gt, threshold: float = PCK_THRESHOLD, root_index: int = 0) -> float:
    """Fraction of joints strictly closer than ``threshold`` after root alignment."""
    return float(np.mean(joint_errors(pred, gt, root_index) < threshold))


def pck_curve(pred, gt, thresholds=AUC_GRID, root_index: int = 0) -> np.ndarray:
    dist = joint_errors(pred, gt, root_index)
    return np.array([np.mean(dist < t) for t in thresholds])


def auc(pred, gt, thresholds=AUC_GRID, root_index: int = 0) -> float:
    """Mean 3DPCK over a grid of thresholds."""
    return float(np.mean(pck_curve(pred, gt, thresholds, root_index)))
