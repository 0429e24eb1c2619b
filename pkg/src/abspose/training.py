"""Training loop, absolute-pose lifting and evaluation for the lifter."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errormodel import ErrorModelSet, perturb_pose
from .geometry import backproject_root
from .lifter import (
    LifterConfig,
    LifterWeights,
    RMSpropState,
    backward,
    depth_target,
    drop_root,
    expand_relative,
    forward,
    init_weights,
    loss,
    rmsprop_step,
    set_standardization,
)
from .normalize import lifter_input
from .synth import flip_arrays, flip_permutation

log = logging.getLogger(__name__)


@dataclass
class PoseDataset:
    """Arrays for N samples: 2D input, 3D ground truth, intrinsics."""

    pose2d: np.ndarray  # (N, J, 2) px
    pose3d: np.ndarray  # (N, J, 3) mm
    principal: np.ndarray  # (N, 2) px
    alpha: np.ndarray  # (N,) px
    root_index: int = 0

    def __post_init__(self):
        self.pose2d = np.asarray(self.pose2d, dtype=np.float64)
        self.pose3d = np.asarray(self.pose3d, dtype=np.float64)
        n = self.pose2d.shape[0]
        self.principal = np.broadcast_to(np.asarray(self.principal, dtype=np.float64), (n, 2))
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=np.float64), (n,))
        if self.pose3d.shape[:2] != self.pose2d.shape[:2]:
            raise ValueError("2D and 3D poses disagree on sample or joint count")

    def __len__(self) -> int:
        return self.pose2d.shape[0]

    @property
    def joint_count(self) -> int:
        return self.pose2d.shape[1]

    @property
    def root(self) -> np.ndarray:
        return self.pose3d[:, self.root_index]

    @property
    def relative(self) -> np.ndarray:
        return self.pose3d - self.pose3d[:, self.root_index : self.root_index + 1]

    @classmethod
    def from_samples(cls, samples) -> PoseDataset:
        if not samples:
            raise ValueError("empty dataset")
        return cls(
            pose2d=np.stack([s.pose2d for s in samples]),
            pose3d=np.stack([s.pose3d for s in samples]),
            principal=np.stack([s.cam.principal for s in samples]),
            alpha=np.array([s.cam.alpha for s in samples]),
            root_index=samples[0].root_index,
        )

    def with_pose2d(self, pose2d) -> PoseDataset:
        return PoseDataset(pose2d, self.pose3d, self.principal, self.alpha, self.root_index)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    lr_final: float = 1e-4
    # epoch at which lr drops to lr_final; None -> two thirds of the run
    lr_drop_epoch: int | None = None
    rho: float = 0.99
    eps: float = 1e-8
    flip: bool = True
    flip_pairs: list[tuple[int, int]] = field(default_factory=list)
    # fit the standardization buffers to the training set before step one
    standardize: bool = True
    seed: int = 0

    @property
    def drop_epoch(self) -> int:
        if self.lr_drop_epoch is not None:
            return self.lr_drop_epoch
        return int(round(self.epochs * 2 / 3))


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"loss became non-finite at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass
class TrainResult:
    weights: LifterWeights
    # entry 0 is the initialized network's loss, then one mean per epoch
    loss_log: list[float]
    val_log: list[dict] = field(default_factory=list)


def make_inputs(pose2d, principal, config: LifterConfig) -> np.ndarray:
    return lifter_input(pose2d, principal, config.use_loc_scale)


def make_targets(data: PoseDataset, config: LifterConfig, relative=None):
    relative = data.relative if relative is None else relative
    depth = depth_target(data.root[:, 2], data.alpha, config)
    return depth, drop_root(relative, data.root_index)


def dataset_loss(weights: LifterWeights, data: PoseDataset, batch: int = 4096) -> float:
    """Eval-mode loss averaged over a whole dataset."""
    cfg = weights.config
    x = make_inputs(data.pose2d, data.principal, cfg)
    depth, rel = make_targets(data, cfg)
    total = 0.0
    for s in range(0, len(data), batch):
        out, _ = forward(weights, x[s : s + batch])
        value, _ = loss(out, depth[s : s + batch], rel[s : s + batch], cfg.lam)
        total += value * out.shape[0]
    return total / len(data)


def train(
    data: PoseDataset,
    config: LifterConfig,
    schedule: TrainConfig | None = None,
    error_model: ErrorModelSet | None = None,
    val: PoseDataset | None = None,
    weights: LifterWeights | None = None,
) -> TrainResult:
    """Minibatch RMSprop on the L1 depth + pose objective.

    Each epoch optionally flips half the samples and re-draws 2D detection
    noise from ``error_model``. Fully deterministic for a given seed.
    """
    sched = schedule or TrainConfig()
    if len(data) == 0:
        raise ValueError("empty training set")
    if data.joint_count != config.joint_count:
        raise ValueError("dataset joint count does not match the config")
    if sched.flip and not sched.flip_pairs:
        raise ValueError("flip augmentation needs a left/right pairing table (flip_pairs)")
    weights = weights if weights is not None else init_weights(config)
    if sched.standardize:
        x0 = make_inputs(data.pose2d, data.principal, config)
        d0, r0 = make_targets(data, config)
        set_standardization(weights, x0, np.column_stack([d0, r0]))
    rng = np.random.default_rng(sched.seed)
    perm_lr = flip_permutation(sched.flip_pairs, data.joint_count) if sched.flip else None
    state = RMSpropState()

    loss_log = [dataset_loss(weights, data)]
    val_log = []
    n = len(data)
    bs = sched.batch_size
    for epoch in range(sched.epochs):
        lr = sched.lr if epoch < sched.drop_epoch else sched.lr_final
        pose2d, pose3d = data.pose2d, data.pose3d
        if perm_lr is not None:
            which = rng.random(n) < 0.5
            f2d, f3d = flip_arrays(pose2d[which], pose3d[which], data.principal[which], perm_lr)
            pose2d, pose3d = pose2d.copy(), pose3d.copy()
            pose2d[which], pose3d[which] = f2d, f3d
        if error_model is not None:
            pose2d = perturb_pose(pose2d, error_model, rng)
        epoch_data = PoseDataset(pose2d, pose3d, data.principal, data.alpha, data.root_index)
        x = make_inputs(epoch_data.pose2d, epoch_data.principal, config)
        depth, rel = make_targets(epoch_data, config)

        order = rng.permutation(n)
        total, count = 0.0, 0
        for step, s in enumerate(range(0, n, bs)):
            idx = order[s : s + bs]
            if idx.size < 2 and n > 1:
                continue  # batch statistics need two samples
            out, cache = forward(weights, x[idx], train=True, rng=rng)
            value, dout = loss(out, depth[idx], rel[idx], config.lam)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, step)
            grads = backward(weights, cache, dout)
            rmsprop_step(weights.params, grads, state, lr, sched.rho, sched.eps)
            total += value * idx.size
            count += idx.size
        loss_log.append(total / count)
        if val is not None:
            val_log.append(evaluate(weights, val))
        log.info("epoch %d lr %.0e loss %.4f", epoch, lr, loss_log[-1])
    return TrainResult(weights=weights, loss_log=loss_log, val_log=val_log)


@dataclass
class Lifted:
    canonical_depth: np.ndarray  # (N,)
    relative: np.ndarray  # (N, J, 3)
    root: np.ndarray | None = None  # (N, 3), only with a focal length

    @property
    def pose3d(self) -> np.ndarray | None:
        if self.root is None:
            return None
        return self.root[:, None, :] + self.relative


def lift(
    weights: LifterWeights, pose2d, principal, alpha=None, root_index: int = 0, batch: int = 4096
) -> Lifted:
    """2D poses -> canonical depth, relative pose and (given alpha) absolute root.

    The root's (X, Y) come from back-projecting the root joint's 2D position
    at the predicted depth; Z = alpha * canonical depth.
    """
    cfg = weights.config
    pose2d = np.asarray(pose2d, dtype=np.float64)
    n = pose2d.shape[0]
    principal = np.broadcast_to(np.asarray(principal, dtype=np.float64), (n, 2))
    x = make_inputs(pose2d, principal, cfg)
    outs = [forward(weights, x[s : s + batch])[0] for s in range(0, n, batch)]
    out = np.concatenate(outs) if outs else np.zeros((0, cfg.output_dim))
    relative = expand_relative(out[:, 1:], root_index)
    raw_depth = out[:, 0]
    if alpha is None:
        return Lifted(raw_depth, relative)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n,))
    if cfg.canonical_depth:
        canon = raw_depth
    else:
        # the network regressed metric depth for a fixed reference focal length
        canon = raw_depth * cfg.reference_alpha / alpha
    xy = backproject_root(pose2d[:, root_index], canon, principal)
    root = np.concatenate([xy, (alpha * canon)[:, None]], axis=1)
    return Lifted(canon, relative, root)


def evaluate(
    weights: LifterWeights, data: PoseDataset, pa: bool = False, thresholds=metrics.AUC_GRID
) -> dict:
    """MPJPE / MRPE / 3DPCK / AUC (and optionally PA-MPJPE) on a dataset."""
    out = lift(weights, data.pose2d, data.principal, data.alpha, data.root_index)
    rel_gt = data.relative
    res = {
        "mpjpe": metrics.mpjpe(out.relative, rel_gt, data.root_index),
        "pck": metrics.pck3d(out.relative, rel_gt, root_index=data.root_index),
        "auc": metrics.auc(out.relative, rel_gt, thresholds, data.root_index),
    }
    res["mrpe"], axes = metrics.mrpe(out.root, data.root)
    res["mrpe_x"], res["mrpe_y"], res["mrpe_z"] = (float(a) for a in axes)
    if pa:
        res["pa_mpjpe"] = metrics.pa_mpjpe(out.relative, rel_gt)
    return res


def mean_pose_baseline(train_data: PoseDataset, val: PoseDataset) -> float:
    """MPJPE of predicting the training-set mean relative pose for every sample."""
    mean_rel = train_data.relative.mean(axis=0)
    pred = np.broadcast_to(mean_rel, val.relative.shape)
    return metrics.mpjpe(pred, val.relative, val.root_index)


def recompute_bn_stats(weights: LifterWeights, x, batch: int = 4096) -> LifterWeights:
    """Replace running statistics by exact dropout-free population statistics.

    Layers are processed in order so each one sees inputs normalized with
    the already-updated statistics of the layers before it.
    """
    cfg = weights.config
    x = np.asarray(x, dtype=np.float64)
    for k in range(cfg.num_blocks):
        for m in (1, 2):
            fc, bn = f"block{k}.fc{m}", f"block{k}.bn{m}"
            zs = []
            for s in range(0, x.shape[0], batch):
                _, cache = forward(weights, x[s : s + batch])
                a = cache.acts[f"{fc}.in"]
                zs.append(a @ weights.params[f"{fc}.W"] + weights.params[f"{fc}.b"])
            z = np.concatenate(zs)
            weights.buffers[f"{bn}.mean"] = z.mean(axis=0)
            weights.buffers[f"{bn}.var"] = z.var(axis=0, ddof=1)
    return weights
