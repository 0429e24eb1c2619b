"""Shared helpers for the experiment scripts."""

import argparse
import time

from abspose.lifter import LifterConfig
from abspose.synth import SynthConfig, default_skeleton, generate
from abspose.training import PoseDataset, TrainConfig, evaluate, train

SPEC = default_skeleton()


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--n-train", type=int, default=20_000)
    p.add_argument("--n-val", type=int, default=2_000)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    return p


def dataset(n: int, seed: int, synth: SynthConfig | None = None) -> PoseDataset:
    return PoseDataset.from_samples(generate(SPEC, n, seed=seed, config=synth))


def fit(args, data: PoseDataset, error_model=None, **lifter_kw):
    cfg = LifterConfig(hidden_dim=args.hidden, seed=args.seed, **lifter_kw)
    sched = TrainConfig(epochs=args.epochs, flip_pairs=SPEC.pairs, seed=args.seed)
    start = time.perf_counter()
    weights = train(data, cfg, sched, error_model=error_model).weights
    return weights, time.perf_counter() - start


def row(label: str, res: dict, seconds: float | None = None) -> str:
    tail = f"  {seconds:6.0f} s" if seconds is not None else ""
    return (
        f"{label:<28} MPJPE {res['mpjpe']:7.1f}  MRPE {res['mrpe']:7.1f}  "
        f"(x {res['mrpe_x']:5.1f} y {res['mrpe_y']:5.1f} z {res['mrpe_z']:6.1f})  "
        f"AUC {res['auc']:.3f}{tail}"
    )


__all__ = ["SPEC", "dataset", "evaluate", "fit", "parser", "row"]
