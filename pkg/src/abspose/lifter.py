"""Residual MLP that lifts a normalized 2D pose to canonical root depth
and a root-relative 3D pose, with hand-written reverse-mode gradients.

Layout::

    x (2J+3) -> stem linear -> [residual block] x num_blocks -> head linear -> (3J-2)

    residual block:  y = x + f(x)
    f = (linear -> batchnorm -> dropout -> relu) applied twice

The first output is the canonical root depth (mm/px); the remaining
3(J-1) are root-relative joint offsets in mm, root omitted.

Inputs and outputs pass through fixed per-feature standardization
buffers (mean/std, identity until set from training data). They are an
affine reparametrization of the stem and head layers and keep raw pixel
locations and millimeter targets on a unit scale for the optimizer.

Everything runs in float64 on numpy arrays of shape (batch, features).
Linear layers compute ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .normalize import input_dim

WEIGHTS_VERSION = "1.0"
SUBLAYER_ORDER = ["linear", "batchnorm", "dropout", "relu"]


@dataclass
class LifterConfig:
    joint_count: int = 17
    hidden_dim: int = 256
    num_blocks: int = 2
    dropout_p: float = 0.5
    use_loc_scale: bool = True
    lam: float = 1000.0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0
    # regress R_z / reference_alpha instead of R_z / alpha when False
    canonical_depth: bool = True
    reference_alpha: float = 1000.0

    def __post_init__(self):
        if self.joint_count < 2:
            raise ValueError("need at least two joints")
        if self.hidden_dim < 8:
            raise ValueError("hidden_dim must be at least 8")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.lam <= 0:
            raise ValueError("lam must be positive")

    @property
    def input_dim(self) -> int:
        return input_dim(self.joint_count, self.use_loc_scale)

    @property
    def output_dim(self) -> int:
        return 3 * self.joint_count - 2


@dataclass
class LifterOutput:
    canonical_depth: np.ndarray  # (N,)
    relative: np.ndarray  # (N, J, 3), root row is zero

    @classmethod
    def from_array(cls, out: np.ndarray, root_index: int = 0) -> LifterOutput:
        out = np.atleast_2d(out)
        return cls(out[:, 0], expand_relative(out[:, 1:], root_index))


def expand_relative(flat, root_index: int = 0) -> np.ndarray:
    """(N, 3(J-1)) offsets without the root -> (N, J, 3) with a zero root row."""
    flat = np.asarray(flat)
    rest = flat.reshape(flat.shape[0], -1, 3)
    return np.insert(rest, root_index, 0.0, axis=1)


def drop_root(relative, root_index: int = 0) -> np.ndarray:
    """(N, J, 3) root-relative pose -> (N, 3(J-1)) flat offsets."""
    relative = np.asarray(relative)
    rest = np.delete(relative, root_index, axis=1)
    return rest.reshape(rest.shape[0], -1)


@dataclass
class LifterWeights:
    config: LifterConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> LifterWeights:
        return LifterWeights(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def layer_shapes(self) -> list[tuple[str, list[int]]]:
        return [(k, list(v.shape)) for k, v in {**self.params, **self.buffers}.items()]


def _bn_names(k: int, m: int) -> str:
    return f"block{k}.bn{m}"


def _fc_names(k: int, m: int) -> str:
    return f"block{k}.fc{m}"


def init_weights(config: LifterConfig, rng: np.random.Generator | None = None) -> LifterWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) linear layers; identity batch norm."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}

    def linear(name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{name}.W"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        params[f"{name}.b"] = rng.uniform(-bound, bound, fan_out)

    h = config.hidden_dim
    linear("stem", config.input_dim, h)
    for k in range(config.num_blocks):
        for m in (1, 2):
            linear(_fc_names(k, m), h, h)
            bn = _bn_names(k, m)
            params[f"{bn}.gamma"] = np.ones(h)
            params[f"{bn}.beta"] = np.zeros(h)
            buffers[f"{bn}.mean"] = np.zeros(h)
            buffers[f"{bn}.var"] = np.ones(h)
    linear("head", h, config.output_dim)
    buffers["input.mean"] = np.zeros(config.input_dim)
    buffers["input.std"] = np.ones(config.input_dim)
    buffers["output.mean"] = np.zeros(config.output_dim)
    buffers["output.std"] = np.ones(config.output_dim)
    return LifterWeights(config, params, buffers)


def set_standardization(weights: LifterWeights, x, y) -> LifterWeights:
    """Set input/output standardization buffers from training inputs ``x`` and targets ``y``."""
    for name, arr in (("input", x), ("output", y)):
        arr = np.asarray(arr, dtype=np.float64)
        weights.buffers[f"{name}.mean"] = arr.mean(axis=0)
        weights.buffers[f"{name}.std"] = np.maximum(arr.std(axis=0), 1e-8)
    return weights


@dataclass
class _BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    batch_stats: bool


@dataclass
class ForwardCache:
    x: np.ndarray
    acts: dict = field(default_factory=dict)
    batch_stats: bool = False


def _batchnorm(w: LifterWeights, name: str, z, batch_stats: bool, update_stats: bool):
    gamma, beta = w.params[f"{name}.gamma"], w.params[f"{name}.beta"]
    eps = w.config.bn_eps
    if batch_stats:
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        if update_stats:
            n = z.shape[0]
            mom = w.config.bn_momentum
            unbiased = var * n / max(n - 1, 1)
            w.buffers[f"{name}.mean"] = (1 - mom) * w.buffers[f"{name}.mean"] + mom * mu
            w.buffers[f"{name}.var"] = (1 - mom) * w.buffers[f"{name}.var"] + mom * unbiased
    else:
        mu, var = w.buffers[f"{name}.mean"], w.buffers[f"{name}.var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (z - mu) * inv_std
    return gamma * xhat + beta, _BNCache(xhat, inv_std, batch_stats)


def forward(
    weights: LifterWeights,
    x,
    train: bool = False,
    rng: np.random.Generator | None = None,
    *,
    dropout: bool | None = None,
    batch_stats: bool | None = None,
    update_stats: bool | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on ``(N, input_dim)`` inputs; returns ``(N, 3J-2)`` and a cache.

    ``train`` switches on dropout, batch-statistics normalization and
    running-statistics updates together; the keyword flags override each
    piece individually. Dropout needs ``rng``.
    """
    cfg = weights.config
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"input has {x.shape[1]} features, network expects {cfg.input_dim}")
    dropout = train if dropout is None else dropout
    batch_stats = train if batch_stats is None else batch_stats
    update_stats = batch_stats if update_stats is None else update_stats
    p = cfg.dropout_p
    use_dropout = dropout and p > 0
    if use_dropout and rng is None:
        raise ValueError("dropout in train mode needs an rng")

    P, B = weights.params, weights.buffers
    x = (x - B["input.mean"]) / B["input.std"]
    cache = ForwardCache(x=x, batch_stats=batch_stats)
    h = x @ P["stem.W"] + P["stem.b"]
    cache.acts["stem.out"] = h
    for k in range(cfg.num_blocks):
        a = h
        for m in (1, 2):
            fc, bn = _fc_names(k, m), _bn_names(k, m)
            cache.acts[f"{fc}.in"] = a
            z = a @ P[f"{fc}.W"] + P[f"{fc}.b"]
            n, bnc = _batchnorm(weights, bn, z, batch_stats, update_stats)
            cache.acts[f"{bn}.cache"] = bnc
            if use_dropout:
                mask = (rng.random(n.shape) >= p) / (1.0 - p)
                n = n * mask
                cache.acts[f"{bn}.mask"] = mask
            a = np.maximum(n, 0.0)
            cache.acts[f"{bn}.relu"] = a
        h = h + a
        cache.acts[f"block{k}.out"] = h
    cache.acts["head.in"] = h
    out = (h @ P["head.W"] + P["head.b"]) * B["output.std"] + B["output.mean"]
    return out, cache


def predict(weights: LifterWeights, x, root_index: int = 0) -> LifterOutput:
    """Eval-mode forward split into canonical depth and relative pose."""
    out, _ = forward(weights, x, train=False)
    return LifterOutput.from_array(out, root_index)


def _bn_backward(w: LifterWeights, name: str, bnc: _BNCache, dn, grads):
    gamma = w.params[f"{name}.gamma"]
    grads[f"{name}.gamma"] = np.sum(dn * bnc.xhat, axis=0)
    grads[f"{name}.beta"] = np.sum(dn, axis=0)
    dxhat = dn * gamma
    if not bnc.batch_stats:
        return dxhat * bnc.inv_std
    n = dn.shape[0]
    return (bnc.inv_std / n) * (
        n * dxhat - dxhat.sum(axis=0) - bnc.xhat * np.sum(dxhat * bnc.xhat, axis=0)
    )


def backward(weights: LifterWeights, cache: ForwardCache | None, dout) -> dict[str, np.ndarray]:
    """Gradients of a scalar objective w.r.t. every parameter, given dL/d(output)."""
    if cache is None:
        raise RuntimeError("backward needs the cache from a forward pass")
    cfg = weights.config
    P = weights.params
    acts = cache.acts
    grads: dict[str, np.ndarray] = {}
    dout = np.asarray(dout, dtype=np.float64) * weights.buffers["output.std"]

    h = acts["head.in"]
    grads["head.W"] = h.T @ dout
    grads["head.b"] = dout.sum(axis=0)
    dh = dout @ P["head.W"].T
    for k in reversed(range(cfg.num_blocks)):
        da = dh  # gradient flowing into the block's residual branch output
        for m in (2, 1):
            fc, bn = _fc_names(k, m), _bn_names(k, m)
            dn = da * (acts[f"{bn}.relu"] > 0)
            mask = acts.get(f"{bn}.mask")
            if mask is not None:
                dn = dn * mask
            dz = _bn_backward(weights, bn, acts[f"{bn}.cache"], dn, grads)
            a_in = acts[f"{fc}.in"]
            grads[f"{fc}.W"] = a_in.T @ dz
            grads[f"{fc}.b"] = dz.sum(axis=0)
            da = dz @ P[f"{fc}.W"].T
        dh = dh + da
    grads["stem.W"] = cache.x.T @ dh
    grads["stem.b"] = dh.sum(axis=0)
    return {k: grads[k] for k in P}


def depth_target(gt_depth, alpha, config: LifterConfig) -> np.ndarray:
    """What the depth output is trained to produce for root depth ``gt_depth`` (mm)."""
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    if config.canonical_depth:
        alpha = np.asarray(alpha, dtype=np.float64)
        if np.any(alpha <= 0):
            raise ValueError("focal length must be positive")
        return gt_depth / alpha
    return gt_depth / config.reference_alpha


def loss(pred, gt_depth_target, gt_relative_flat, lam: float) -> tuple[float, np.ndarray]:
    """L1 loss on depth plus ``lam`` times L1 on the relative pose, batch mean.

    ``pred`` is the raw ``(N, 3J-2)`` network output; ``gt_depth_target`` is
    R_z*/alpha per sample; ``gt_relative_flat`` is ``(N, 3(J-1))`` in mm.
    The pose term sums over coordinates within a sample. Returns the loss
    and its gradient w.r.t. ``pred``.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    n = pred.shape[0]
    d_depth = pred[:, 0] - np.asarray(gt_depth_target, dtype=np.float64)
    d_pose = pred[:, 1:] - np.asarray(gt_relative_flat, dtype=np.float64)
    value = (np.sum(np.abs(d_depth)) + lam * np.sum(np.abs(d_pose))) / n
    grad = np.empty_like(pred)
    grad[:, 0] = np.sign(d_depth) / n
    grad[:, 1:] = lam * np.sign(d_pose) / n
    return float(value), grad


@dataclass
class RMSpropState:
    square_avg: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0


def rmsprop_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: RMSpropState,
    lr: float = 1e-3,
    rho: float = 0.99,
    eps: float = 1e-8,
) -> RMSpropState:
    """In-place RMSprop: v <- rho v + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(v) + eps)."""
    for name, g in grads.items():
        v = state.square_avg.get(name)
        if v is None:
            v = np.zeros_like(g)
        v = rho * v + (1.0 - rho) * g * g
        state.square_avg[name] = v
        params[name] -= lr * g / (np.sqrt(v) + eps)
    state.steps += 1
    return state


def save_weights(weights: LifterWeights, path) -> None:
    """Write an ``.npz`` container: one array per parameter/buffer plus a JSON header."""
    meta = {
        "version": WEIGHTS_VERSION,
        "config": asdict(weights.config),
        "sublayer_order": SUBLAYER_ORDER,
        "layers": weights.layer_shapes(),
        "param_names": list(weights.params),
        "buffer_names": list(weights.buffers),
    }
    arrays = {**weights.params, **weights.buffers}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_weights(path, expected: LifterConfig | None = None) -> LifterWeights:
    """Read weights; refuses version or (when ``expected`` is given) config mismatches."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        major = str(meta.get("version", "")).split(".")[0]
        if major != WEIGHTS_VERSION.split(".")[0]:
            raise ValueError(f"unsupported weights version {meta.get('version')!r}")
        if meta.get("sublayer_order") != SUBLAYER_ORDER:
            raise ValueError("weights were saved with a different residual sub-layer order")
        config = LifterConfig(**meta["config"])
        if expected is not None and asdict(expected) != asdict(config):
            raise ValueError("weight file config does not match the expected config")
        params = {k: data[k].copy() for k in meta["param_names"]}
        buffers = {k: data[k].copy() for k in meta["buffer_names"]}
    weights = LifterWeights(config, params, buffers)
    ref = init_weights(config, np.random.default_rng(0))
    for k, v in {**ref.params, **ref.buffers}.items():
        got = {**params, **buffers}.get(k)
        if got is None or got.shape != v.shape:
            raise ValueError(f"layer {k} missing or mis-shaped in weight file")
    return weights
