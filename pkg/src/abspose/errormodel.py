"""Gaussian + uniform mixture model of 2D joint detection error.

Each joint's error e = detected - true is modeled as

    p(e) = gamma * N(e; mu, diag(sx^2, sy^2)) + (1 - gamma) / v

where the uniform part covers the box [-support, support]^2 (so that
v = (2 * support)^2) and is zero outside it. The Gaussian captures small
jitter, the uniform part captures gross outliers (joint confusions and
misses). Parameters other than v are fitted by EM.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT_VERSION = "1.0"
DEFAULT_SUPPORT = 50.0
INIT_GAMMA = 0.9


@dataclass
class MixtureErrorParams:
    gamma: float
    mu: np.ndarray
    sigma: np.ndarray
    support: float = DEFAULT_SUPPORT

    def __post_init__(self):
        self.gamma = float(self.gamma)
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(2)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(2)
        self.support = float(self.support)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if np.any(self.sigma <= 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.support > 0:
            raise ValueError("uniform support must be positive")

    @property
    def v(self) -> float:
        """Normalization constant of the uniform component (px^2)."""
        return (2.0 * self.support) ** 2

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}


def _log_components(e, params: MixtureErrorParams) -> tuple[np.ndarray, np.ndarray]:
    """Weighted log densities of the Gaussian and uniform parts, ``(N,)`` each."""
    e = np.asarray(e, dtype=np.float64)
    z = (e - params.mu) / params.sigma
    log_gauss = -0.5 * np.sum(z**2, axis=-1) - np.log(2.0 * np.pi) - np.sum(np.log(params.sigma))
    inside = np.all(np.abs(e) <= params.support, axis=-1)
    with np.errstate(divide="ignore"):
        log_g = np.log(params.gamma) + log_gauss
        log_u = np.where(inside, np.log1p(-params.gamma) - np.log(params.v), -np.inf)
    return log_g, log_u


def log_pdf(e, params: MixtureErrorParams) -> np.ndarray:
    log_g, log_u = _log_components(e, params)
    return np.logaddexp(log_g, log_u)


def pdf(e, params: MixtureErrorParams):
    """Mixture density at error(s) ``e`` of shape ``(..., 2)``."""
    out = np.exp(log_pdf(e, params))
    return float(out) if np.ndim(out) == 0 else out


def marginal_pdf(x, params: MixtureErrorParams, axis: int = 0):
    """Density of one error coordinate (0 = x, 1 = y) under the mixture."""
    x = np.asarray(x, dtype=np.float64)
    mu, s = params.mu[axis], params.sigma[axis]
    gauss = np.exp(-0.5 * ((x - mu) / s) ** 2) / (np.sqrt(2.0 * np.pi) * s)
    unif = np.where(np.abs(x) <= params.support, 1.0 / (2.0 * params.support), 0.0)
    return params.gamma * gauss + (1.0 - params.gamma) * unif


def gaussian_marginal_pdf(x, mu: float, sigma: float):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (np.sqrt(2.0 * np.pi) * sigma)


def nll(data, params: MixtureErrorParams) -> float:
    """Negative log likelihood of ``(N, 2)`` errors.

    Raises ``ValueError`` naming the first datum with zero density.
    """
    lp = log_pdf(np.atleast_2d(data), params)
    bad = np.flatnonzero(~np.isfinite(lp))
    if bad.size:
        raise ValueError(f"datum {bad[0]} has zero density under the mixture")
    return float(-np.sum(lp))


def init_params(data, support: float = DEFAULT_SUPPORT) -> MixtureErrorParams:
    """Single-Gaussian fit (sample mean, population std) with gamma = 0.9."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] < 2:
        raise ValueError("need at least two error samples")
    mu = data.mean(axis=0)
    sigma = data.std(axis=0)
    if np.any(sigma <= 0):
        raise ValueError("error data has zero variance along an axis")
    return MixtureErrorParams(gamma=INIT_GAMMA, mu=mu, sigma=sigma, support=support)


def single_gaussian(data, support: float = DEFAULT_SUPPORT) -> MixtureErrorParams:
    """Maximum-likelihood single Gaussian, expressed as a mixture with gamma = 1."""
    p = init_params(data, support)
    p.gamma = 1.0
    return p


@dataclass
class EMResult:
    params: MixtureErrorParams
    nll_history: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    degenerate: bool = False

    @property
    def nll(self) -> float:
        return self.nll_history[-1]


def fit_em(data, init: MixtureErrorParams, max_iters: int = 200, tol: float = 1e-6) -> EMResult:
    """Fit gamma, mu, sigma by EM with the uniform box held fixed.

    Stops when one iteration improves the NLL by less than ``tol``. If the
    Gaussian loses all responsibility mass, returns with ``degenerate=True``
    and gamma = 0 instead of raising.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("no error samples to fit")
    params = MixtureErrorParams(init.gamma, init.mu.copy(), init.sigma.copy(), init.support)
    n = data.shape[0]

    def step_stats(p):
        log_g, log_u = _log_components(data, p)
        log_tot = np.logaddexp(log_g, log_u)
        return log_g, log_tot

    log_g, log_tot = step_stats(params)
    history = [float(-np.sum(log_tot))]
    result = EMResult(params=params, nll_history=history)

    for it in range(1, max_iters + 1):
        with np.errstate(invalid="ignore"):
            resp = np.exp(log_g - log_tot)
        resp = np.nan_to_num(resp, nan=0.0)
        mass = resp.sum()
        if mass <= 0:
            log.warning("EM degenerate: the uniform component explains all data")
            params.gamma = 0.0
            result.degenerate = True
            result.n_iter = it
            result.nll_history.append(float(-np.sum(step_stats(params)[1])))
            return result
        mu = resp @ data / mass
        var = resp @ (data - mu) ** 2 / mass
        if np.any(var <= 0):
            log.warning("EM degenerate: Gaussian collapsed onto a single point")
            result.degenerate = True
            result.n_iter = it
            return result
        params = MixtureErrorParams(mass / n, mu, np.sqrt(var), params.support)
        log_g, log_tot = step_stats(params)
        history.append(float(-np.sum(log_tot)))
        result.params = params
        result.n_iter = it
        if history[-2] - history[-1] < tol:
            result.converged = True
            break
    return result


def sample(params: MixtureErrorParams, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw errors of shape ``size + (2,)`` (a single ``(2,)`` error by default)."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    # always consume the same amount of randomness so streams stay aligned
    pick = rng.random(shape)
    gauss = params.mu + params.sigma * rng.standard_normal(shape + (2,))
    unif = rng.uniform(-params.support, params.support, shape + (2,))
    return np.where((pick < params.gamma)[..., None], gauss, unif)


@dataclass
class ErrorModelSet:
    per_joint: list[MixtureErrorParams]

    @property
    def joint_count(self) -> int:
        return len(self.per_joint)

    @property
    def support(self) -> float:
        return self.per_joint[0].support

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "joint_count": self.joint_count,
            "support": self.support,
            "per_joint": [p.to_dict() for p in self.per_joint],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ErrorModelSet:
        major = str(doc.get("version", "")).split(".")[0]
        if major != FORMAT_VERSION.split(".")[0]:
            raise ValueError(f"unsupported error model version {doc.get('version')!r}")
        support = float(doc["support"])
        models = [
            MixtureErrorParams(j["gamma"], j["mu"], j["sigma"], support) for j in doc["per_joint"]
        ]
        if len(models) != int(doc["joint_count"]):
            raise ValueError("joint_count does not match the per-joint list")
        return cls(models)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> ErrorModelSet:
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_joints(
    errors,
    support: float = DEFAULT_SUPPORT,
    pool: bool = False,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> tuple[ErrorModelSet, list[EMResult]]:
    """Fit one mixture per joint from ``(N, J, 2)`` errors.

    With ``pool=True`` all joints share a single mixture fitted to the
    concatenated errors.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 3 or errors.shape[-1] != 2:
        raise ValueError(f"expected (N, J, 2) errors, got {errors.shape}")
    n_joints = errors.shape[1]
    if pool:
        flat = errors.reshape(-1, 2)
        res = fit_em(flat, init_params(flat, support), max_iters, tol)
        return ErrorModelSet([res.params] * n_joints), [res] * n_joints
    results = [
        fit_em(errors[:, j], init_params(errors[:, j], support), max_iters, tol)
        for j in range(n_joints)
    ]
    return ErrorModelSet([r.params for r in results]), results


def perturb_pose(pose, models: ErrorModelSet, rng: np.random.Generator) -> np.ndarray:
    """Displace each joint of ``(..., J, 2)`` pose(s) by an independent error draw."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[-2] != models.joint_count:
        raise ValueError(
            f"pose has {pose.shape[-2]} joints but the error model covers {models.joint_count}"
        )
    batch = pose.shape[:-2]
    noise = np.stack([sample(m, rng, batch) for m in models.per_joint], axis=-2)
    return pose + noise
