"""Input normalization for the lifter.

A 2D pose in original-image pixels is shifted by the principal point,
then centered and scaled to unit RMS radius. The location (mean) and
scale (RMS radius) are appended, giving a (2J + 3)-vector laid out as::

    [p1.x, p1.y, ..., pJ.x, pJ.y, u.x, u.y, sigma]

All functions accept a single pose ``(J, 2)`` or a batch ``(..., J, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NormalizedInput:
    normalized: np.ndarray  # (..., J, 2)
    location: np.ndarray  # (..., 2) px
    scale: np.ndarray | float  # (...) px

    def to_vector(self, use_loc_scale: bool = True) -> np.ndarray:
        """Flatten to the lifter input layout (2J + 3, or 2J without loc/scale)."""
        flat = self.normalized.reshape(*self.normalized.shape[:-2], -1)
        if not use_loc_scale:
            return flat
        scale = np.asarray(self.scale)[..., None]
        return np.concatenate([flat, self.location, scale], axis=-1)


def shift_principal(pose, principal) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    principal = np.asarray(principal, dtype=np.float64)
    return pose - principal[..., None, :]


def statistics(pose) -> tuple[np.ndarray, np.ndarray | float]:
    """Mean location and scalar RMS radius of a (shifted) 2D pose.

    The scale is one number pooled over both axes:
    sqrt(sum_i ||p_i - u||^2 / J).
    """
    pose = np.asarray(pose, dtype=np.float64)
    u = pose.mean(axis=-2)
    sigma = np.sqrt(np.sum((pose - u[..., None, :]) ** 2, axis=(-2, -1)) / pose.shape[-2])
    if sigma.ndim == 0:
        sigma = float(sigma)
    return u, sigma


def normalize_layer(pose, principal) -> NormalizedInput:
    """Shift by the principal point, then center and scale.

    Raises ``ValueError`` if any pose has zero scale (all joints coincide).
    """
    shifted = shift_principal(pose, principal)
    u, sigma = statistics(shifted)
    sigma_arr = np.asarray(sigma)
    if np.any(sigma_arr <= 0):
        raise ValueError("degenerate 2D pose: all joints coincide (zero scale)")
    normalized = (shifted - u[..., None, :]) / sigma_arr[..., None, None]
    return NormalizedInput(normalized=normalized, location=u, scale=sigma)


def input_dim(joint_count: int, use_loc_scale: bool = True) -> int:
    return 2 * joint_count + (3 if use_loc_scale else 0)


def lifter_input(pose, principal, use_loc_scale: bool = True) -> np.ndarray:
    """Normalize and flatten in one go; returns ``(..., 2J[+3])``."""
    return normalize_layer(pose, principal).to_vector(use_loc_scale)


def image_center(width: float, height: float) -> np.ndarray:
    """Principal-point fallback when the intrinsics are unknown."""
    return np.array([width / 2.0, height / 2.0])
