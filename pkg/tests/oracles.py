"""Independent reference implementations used by the tests."""

import numpy as np
from scipy.optimize import root
from scipy.spatial.transform import Rotation


def so3_grid(step_deg: float = 2.0) -> np.ndarray:
    """Dense ZYZ Euler grid over SO(3), returned as ``(M, 9)`` flattened matrices."""
    a = np.deg2rad(np.arange(0.0, 360.0, step_deg))
    b = np.deg2rad(np.arange(0.0, 180.0 + 1e-9, step_deg))
    angles = np.stack(np.meshgrid(a, b, a, indexing="ij"), axis=-1).reshape(-1, 3)
    return Rotation.from_euler("ZYZ", angles).as_matrix().reshape(-1, 9)


def _alignment(rot, x, y):
    # optimal non-negative scale for a fixed rotation
    s = max(0.0, np.sum(rot * (y.T @ x)) / np.sum(x**2))
    return s


def brute_force_pa_mpjpe(pairs, grid: np.ndarray, chunk: int = 200_000) -> np.ndarray:
    """PA-MPJPE by exhaustive rotation search plus local refinement.

    For every rotation on the grid the optimal scale and translation are
    closed form, so the least-squares cost reduces to maximizing
    tr(R^T C) with C the centered cross-covariance. The best grid rotation
    is refined by solving grad = 0 of that objective over a local rotation
    vector, with the gradient taken by central finite differences.
    """
    xs, ys, covs = [], [], []
    for pred, gt in pairs:
        x = pred - pred.mean(axis=0)
        y = gt - gt.mean(axis=0)
        xs.append(x)
        ys.append(y)
        covs.append((y.T @ x).reshape(9))
    covs = np.array(covs).T  # (9, P)
    best_val = np.full(covs.shape[1], -np.inf)
    best_idx = np.zeros(covs.shape[1], dtype=int)
    for s in range(0, grid.shape[0], chunk):
        scores = grid[s : s + chunk] @ covs
        i = np.argmax(scores, axis=0)
        v = scores[i, np.arange(covs.shape[1])]
        better = v > best_val
        best_val[better] = v[better]
        best_idx[better] = i[better] + s

    out = []
    for k, (pred, gt) in enumerate(pairs):
        r0 = grid[best_idx[k]].reshape(3, 3)
        cov = covs[:, k].reshape(3, 3)

        def objective(w, r0=r0, cov=cov):
            return np.sum((r0 @ Rotation.from_rotvec(w).as_matrix()) * cov)

        def grad(w, objective=objective, h=1e-6):
            g = np.zeros(3)
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                g[i] = (objective(w + e) - objective(w - e)) / (2 * h)
            return g

        sol = root(grad, np.zeros(3), method="hybr", options={"xtol": 1e-14})
        rot = r0 @ Rotation.from_rotvec(sol.x).as_matrix()
        scale = _alignment(rot, xs[k], ys[k])
        aligned = scale * xs[k] @ rot.T + gt.mean(axis=0)
        out.append(np.mean(np.linalg.norm(aligned - gt, axis=1)))
    return np.array(out)


def numeric_gradients(params: dict, objective, h: float = 1e-5) -> dict:
    """Central finite differences of ``objective()`` w.r.t. every entry of ``params``."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = objective()
            flat[i] = orig - h
            down = objective()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def relative_error(a, b, floor: float = 1e-8) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
