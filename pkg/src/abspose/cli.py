"""Command-line entry point: ``abspose <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import errormodel, metrics
from .lifter import LifterConfig, load_weights, save_weights
from .normalize import image_center, shift_principal, statistics
from .posefile import (
    PoseFileError,
    read_pose_file,
    record_camera,
    records_to_dataset,
    samples_to_records,
    write_pose_file,
)
from .synth import SkeletonSpec, SynthConfig, default_skeleton, generate
from .training import TrainConfig, TrainingDiverged, lift, train

log = logging.getLogger("abspose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METRIC_NAMES = ("mpjpe", "pa_mpjpe", "mrpe", "pck", "auc")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {text!r}")
    return vals


def _pair(text: str) -> list[float]:
    return _floats(text, 2)


def _range(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected one or two values, got {text!r}")
    return vals[0], vals[1]


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive stop) or a comma-separated list, in mm."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise UsageError("grid step must be positive")
        return np.arange(start, stop + step * 1e-9, step)
    return np.array(_floats(text))


def _read(path) -> tuple[dict, list[dict]]:
    try:
        return read_pose_file(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    except (PoseFileError, KeyError, ValueError) as exc:
        raise DataError(str(exc))


# fit-error -----------------------------------------------------------------


def _detection_errors(pred_path, gt_path) -> np.ndarray:
    hp, pred = _read(pred_path)
    hg, gt = _read(gt_path)
    if hp["joint_count"] != hg["joint_count"]:
        raise DataError(f"joint count mismatch: {hp['joint_count']} vs {hg['joint_count']}")
    if len(pred) != len(gt):
        raise DataError(f"record count mismatch: {len(pred)} vs {len(gt)}")
    if not pred:
        return np.zeros((0, hp["joint_count"], 2))
    try:
        return np.stack([p["pose2d"] for p in pred]) - np.stack([g["pose2d"] for g in gt])
    except (KeyError, TypeError):
        raise DataError("both files need pose2d on every record")


def cmd_fit_error(args) -> int:
    errors = _detection_errors(args.pred, args.gt)
    if errors.shape[0] < 2:
        raise DataError("need at least two records to fit an error model")
    try:
        models, results = errormodel.fit_joints(
            errors, support=args.support, pool=args.pool, max_iters=args.max_iters, tol=args.tol
        )
    except ValueError as exc:
        raise DataError(f"cannot fit error model: {exc}")
    print(f"{'joint':>5} {'gamma':>7} {'mu_x':>8} {'mu_y':>8} {'sig_x':>8} {'sig_y':>8} "
          f"{'nll_mix':>12} {'nll_gauss':>12}")  # fmt: skip
    for j, (m, res) in enumerate(zip(models.per_joint, results)):
        data = errors.reshape(-1, 2) if args.pool else errors[:, j]
        single = errormodel.nll(data, errormodel.single_gaussian(data, args.support))
        flag = " degenerate" if res.degenerate else ""
        print(f"{j:>5} {m.gamma:7.4f} {m.mu[0]:8.3f} {m.mu[1]:8.3f} {m.sigma[0]:8.3f} "
              f"{m.sigma[1]:8.3f} {res.nll:12.2f} {single:12.2f}{flag}")  # fmt: skip
    models.save(args.out)
    return EXIT_OK


# synth -----------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        spec = SkeletonSpec.load(args.spec) if args.spec else default_skeleton()
    except FileNotFoundError:
        raise DataError(f"no such file: {args.spec}")
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad skeleton spec: {exc}")
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    cfg = SynthConfig(depth_range=args.depth_range, alpha_range=args.alpha)
    if args.principal is not None:
        cfg.principal = tuple(args.principal)
    try:
        samples = generate(spec, args.n, args.seed, cfg)
    except ValueError as exc:
        raise UsageError(str(exc))
    write_pose_file(
        args.out,
        samples_to_records(samples),
        spec.joint_count,
        joint_names=spec.names,
        flip_pairs=[list(p) for p in spec.pairs],
    )
    return EXIT_OK


# train -----------------------------------------------------------------------


def _load_train_config(path) -> tuple[LifterConfig, TrainConfig]:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise DataError(f"no such file: {path}")
        except json.JSONDecodeError as exc:
            raise DataError(f"bad config: {exc}")
    lifter_keys = {f.name for f in fields(LifterConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    lc, tc = doc.get("lifter", {}), doc.get("train", {})
    unknown = (set(lc) - lifter_keys) | (set(tc) - train_keys)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        return LifterConfig(**lc), TrainConfig(**tc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}")


def cmd_train(args) -> int:
    lcfg, tcfg = _load_train_config(args.config)
    header, records = _read(args.data)
    data = _dataset(records)
    lcfg.joint_count = data.joint_count
    if tcfg.flip and not tcfg.flip_pairs:
        tcfg.flip_pairs = [tuple(p) for p in header.get("flip_pairs", [])]
        if not tcfg.flip_pairs:
            log.warning("no left/right pairing available: flip augmentation disabled")
            tcfg.flip = False
    val = _dataset(_read(args.val)[1]) if args.val else None
    model = None
    if args.error_model:
        try:
            model = errormodel.ErrorModelSet.load(args.error_model)
        except FileNotFoundError:
            raise DataError(f"no such file: {args.error_model}")
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad error model: {exc}")
    try:
        result = train(data, lcfg, tcfg, error_model=model, val=val)
    except TrainingDiverged as exc:
        print(f"error: training diverged at epoch {exc.epoch}", file=sys.stderr)
        raise NumericError(str(exc))
    except ValueError as exc:
        raise DataError(str(exc))
    save_weights(result.weights, args.out)
    log_path = args.log or str(args.out) + ".log.json"
    doc = {
        "lifter": asdict(lcfg),
        "train": asdict(tcfg),
        "loss": result.loss_log,
        "val": result.val_log,
    }
    Path(log_path).write_text(json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


def _dataset(records):
    try:
        return records_to_dataset(records)
    except (PoseFileError, KeyError, TypeError, ValueError) as exc:
        raise DataError(str(exc))


# lift ------------------------------------------------------------------------


def cmd_lift(args) -> int:
    try:
        weights = load_weights(args.weights)
    except FileNotFoundError:
        raise DataError(f"no such file: {args.weights}")
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad weight file: {exc}")
    header, records = _read(args.poses2d)
    if header["joint_count"] != weights.config.joint_count:
        raise DataError(
            f"poses have {header['joint_count']} joints, network expects {weights.config.joint_count}"
        )
    if args.principal is not None:
        flag_principal = np.asarray(args.principal)
    elif args.image_size is not None:
        flag_principal = image_center(*args.image_size)
    else:
        flag_principal = None
    out_records = []
    for rec in records:
        if rec.get("pose2d") is None:
            raise DataError(f"record {rec.get('id')!r} has no pose2d")
        cam = record_camera(rec)
        principal = flag_principal if flag_principal is not None else (
            cam.principal if cam is not None else None
        )  # fmt: skip
        if principal is None:
            raise UsageError("no principal point: pass --principal or --image-size")
        alpha = args.alpha if args.alpha is not None else (cam.alpha if cam is not None else None)
        try:
            res = lift(weights, rec["pose2d"][None], principal[None], alpha, rec["root_index"])
        except ValueError as exc:
            raise DataError(f"record {rec.get('id')!r}: {exc}")
        out = {
            "id": rec.get("id"),
            "root_index": rec["root_index"],
            "pose2d": rec["pose2d"],
            "canonical_depth": float(res.canonical_depth[0]),
            "relative3d": res.relative[0],
        }
        if res.root is not None:
            out["pose3d"] = res.pose3d[0]
            out["camera"] = {
                "alpha": float(alpha),
                "cx": float(principal[0]),
                "cy": float(principal[1]),
            }
        for key in ("action", "sequence"):
            if key in rec:
                out[key] = rec[key]
        out_records.append(out)
    write_pose_file(args.out, out_records, header["joint_count"], header.get("joint_names"))
    return EXIT_OK


# eval ------------------------------------------------------------------------


def _relative(rec) -> np.ndarray:
    if rec.get("pose3d") is not None:
        p = rec["pose3d"]
        return p - p[rec["root_index"]]
    if rec.get("relative3d") is not None:
        return rec["relative3d"]
    raise DataError(f"record {rec.get('id')!r} has neither pose3d nor relative3d")


def _metric_block(pred, gt, names, threshold, grid) -> dict:
    rel_p = np.stack([_relative(r) for r in pred])
    rel_g = np.stack([_relative(r) for r in gt])
    root = gt[0]["root_index"]
    out = {"count": len(pred)}
    if "mpjpe" in names:
        out["mpjpe"] = metrics.mpjpe(rel_p, rel_g, root)
    if "pa_mpjpe" in names:
        try:
            out["pa_mpjpe"] = metrics.pa_mpjpe(rel_p, rel_g)
        except ValueError as exc:
            raise NumericError(str(exc))
    if "mrpe" in names:
        if any(r.get("pose3d") is None for r in pred + gt):
            raise DataError("mrpe needs absolute pose3d in both files")
        rp = np.stack([r["pose3d"][r["root_index"]] for r in pred])
        rg = np.stack([r["pose3d"][r["root_index"]] for r in gt])
        m, axes = metrics.mrpe(rp, rg)
        out.update(mrpe=m, mrpe_x=float(axes[0]), mrpe_y=float(axes[1]), mrpe_z=float(axes[2]))
    if "pck" in names:
        out["pck"] = metrics.pck3d(rel_p, rel_g, threshold, root)
    if "auc" in names:
        out["auc"] = metrics.auc(rel_p, rel_g, grid, root)
    return out


def cmd_eval(args) -> int:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in names if m not in METRIC_NAMES]
    if bad:
        raise UsageError(f"unknown metric(s) {bad}; choose from {list(METRIC_NAMES)}")
    grid = parse_grid(args.auc_grid)
    hp, pred = _read(args.pred)
    hg, gt = _read(args.gt)
    if hp["joint_count"] != hg["joint_count"]:
        raise DataError("joint count mismatch between prediction and ground truth")
    if len(pred) != len(gt):
        raise DataError(f"record count mismatch: {len(pred)} vs {len(gt)}")
    if not pred:
        raise DataError("no records to evaluate")
    gt_by_id = {g.get("id"): g for g in gt}
    if all(p.get("id") in gt_by_id for p in pred) and len(gt_by_id) == len(gt):
        gt = [gt_by_id[p.get("id")] for p in pred]
    report = {
        "version": "1.0",
        "metrics": names,
        "pck_threshold": args.pck_threshold,
        "auc_grid": grid.tolist(),
        "aggregate": _metric_block(pred, gt, names, args.pck_threshold, grid),
    }
    groups: dict[str, list[int]] = {}
    for i, g in enumerate(gt):
        key = g.get("action", g.get("sequence"))
        if key is not None:
            groups.setdefault(str(key), []).append(i)
    if groups:
        report["per_group"] = {
            k: _metric_block([pred[i] for i in idx], [gt[i] for i in idx], names,
                             args.pck_threshold, grid)
            for k, idx in sorted(groups.items())
        }  # fmt: skip
    text = json.dumps(report, indent=1) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# plotdata --------------------------------------------------------------------


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def error_histogram(errors_1d, params: errormodel.MixtureErrorParams, axis: int, bins: int):
    """Rows of (bin center, count, single-Gaussian pdf, mixture pdf)."""
    errors_1d = np.asarray(errors_1d, dtype=np.float64)
    if errors_1d.size == 0:
        return []
    lo = min(errors_1d.min(), -params.support)
    hi = max(errors_1d.max(), params.support)
    counts, edges = np.histogram(errors_1d, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    gmu, gsig = errors_1d.mean(), errors_1d.std()
    gauss = errormodel.gaussian_marginal_pdf(centers, gmu, gsig)
    mix = errormodel.marginal_pdf(centers, params, axis)
    return list(zip(centers, counts.tolist(), gauss, mix))


def cmd_plotdata(args) -> int:
    if args.mode == "error-hist":
        if not (args.pred and args.gt):
            raise UsageError("error-hist needs --pred and --gt")
        errors = _detection_errors(args.pred, args.gt)
        axis = {"x": 0, "y": 1}[args.axis]
        rows = []
        if errors.shape[0] > 0:
            if not 0 <= args.joint < errors.shape[1]:
                raise UsageError(f"--joint out of range (0..{errors.shape[1] - 1})")
            data = errors[:, args.joint]
            if args.model:
                params = errormodel.ErrorModelSet.load(args.model).per_joint[args.joint]
            else:
                try:
                    params = errormodel.fit_em(
                        data, errormodel.init_params(data, args.support)
                    ).params
                except ValueError as exc:
                    raise DataError(str(exc))
            rows = error_histogram(data[:, axis], params, axis, args.bins)
        _write_csv(args.out, ["bin", "count", "gaussian_pdf", "mixture_pdf"], rows)
        return EXIT_OK

    if not args.poses:
        raise UsageError("depth-scatter needs --poses")
    _, records = _read(args.poses)
    lifted = None
    if args.lifted:
        _, lifted = _read(args.lifted)
        if len(lifted) != len(records):
            raise DataError("lifted file and pose file have different record counts")
    rows = []
    for i, rec in enumerate(records):
        cam = record_camera(rec)
        principal = np.asarray(args.principal) if args.principal else (
            cam.principal if cam is not None else None
        )  # fmt: skip
        if principal is None or rec.get("pose2d") is None:
            raise DataError(f"record {rec.get('id')!r} needs pose2d and a principal point")
        _, sigma = statistics(shift_principal(rec["pose2d"], principal))
        if lifted is not None:
            depth = float(lifted[i]["canonical_depth"])
        else:
            if cam is None or rec.get("pose3d") is None:
                raise DataError("ground-truth depth needs pose3d and camera on every record")
            depth = float(rec["pose3d"][rec["root_index"], 2] / cam.alpha)
        rows.append((sigma, depth))
    _write_csv(args.out, ["sigma", "canonical_depth"], rows)
    return EXIT_OK


# wiring ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="abspose", description="Absolute 3D pose lifting from 2D poses.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit-error", help="fit per-joint Gaussian+uniform 2D error models")
    s.add_argument("pred", help="pose file with detected 2D poses")
    s.add_argument("gt", help="pose file with ground-truth 2D poses")
    s.add_argument("--support", type=float, default=errormodel.DEFAULT_SUPPORT,
                   help="half-width of the uniform outlier box, px")  # fmt: skip
    s.add_argument("--pool", action="store_true", help="fit one model shared by all joints")
    s.add_argument("--max-iters", type=int, default=200)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_error)

    s = sub.add_parser("synth", help="generate a synthetic pose dataset")
    s.add_argument("--spec", help="skeleton spec JSON (default: built-in 17-joint skeleton)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--depth-range", type=_range, default=(2000.0, 8000.0), help="lo,hi in mm")
    s.add_argument("--alpha", type=_range, default=(1000.0, 1000.0), help="focal px, or lo,hi")
    s.add_argument("--principal", type=_pair, help="cx,cy in px (default 512,512)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the lifter")
    s.add_argument("--data", required=True)
    s.add_argument("--val")
    s.add_argument("--config", help='JSON {"lifter": {...}, "train": {...}}')
    s.add_argument("--error-model", help="perturb training 2D poses with this error model")
    s.add_argument("--out", required=True, help="weights file (.npz)")
    s.add_argument("--log", help="loss log path (default: <out>.log.json)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("lift", help="lift 2D poses to 3D")
    s.add_argument("--weights", required=True)
    s.add_argument("--poses2d", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--principal", type=_pair, help="cx,cy in px")
    g.add_argument("--image-size", type=_pair, help="W,H; principal point taken as the center")
    s.add_argument("--alpha", type=float, help="focal length in px; enables absolute output")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_lift)

    s = sub.add_parser("eval", help="evaluate predicted 3D poses")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--metrics", default=",".join(METRIC_NAMES))
    s.add_argument("--pck-threshold", type=float, default=metrics.PCK_THRESHOLD)
    s.add_argument("--auc-grid", default="5:150:5", help="start:stop:step or a comma list, mm")
    s.add_argument("--report", help="JSON report path (default: stdout)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plotdata", help="export CSV data for error/depth plots")
    s.add_argument("--mode", choices=["error-hist", "depth-scatter"], required=True)
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--model", help="fitted error model JSON (default: fit on the fly)")
    s.add_argument("--joint", type=int, default=0)
    s.add_argument("--axis", choices=["x", "y"], default="x")
    s.add_argument("--bins", type=int, default=50)
    s.add_argument("--support", type=float, default=errormodel.DEFAULT_SUPPORT)
    s.add_argument("--poses", help="pose file (depth-scatter)")
    s.add_argument("--lifted", help="lift output with canonical_depth (depth-scatter)")
    s.add_argument("--principal", type=_pair)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
