"""JSON-lines pose files.

Line 1 is a header::

    {"version": "1.0", "joint_count": 17, "joint_names": [...], "units": {...}}

Every following line is one record::

    {"id": "...", "root_index": 0, "pose2d": [[x, y], ...],
     "pose3d": [[X, Y, Z], ...], "camera": {"alpha": a, "cx": cx, "cy": cy}}

``pose2d``, ``pose3d`` and ``camera`` are optional. Lifter output adds
``canonical_depth`` and ``relative3d``. Floats are written with Python's
shortest round-trip repr, so reading back is lossless.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics
from .training import PoseDataset

VERSION = "1.0"
UNITS = {"pose2d": "px", "pose3d": "mm", "canonical_depth": "mm/px"}


class PoseFileError(ValueError):
    pass


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_pose_file(path, records, joint_count: int, joint_names=None, **header_extra) -> None:
    header = {"version": VERSION, "joint_count": int(joint_count), "units": UNITS}
    if joint_names is not None:
        header["joint_names"] = list(joint_names)
    header.update(_jsonable(header_extra))
    lines = [json.dumps(header)]
    for rec in records:
        _check_record(rec, joint_count)
        lines.append(json.dumps(_jsonable(rec)))
    Path(path).write_text("\n".join(lines) + "\n")


def _check_record(rec: dict, joint_count: int, lineno: int | None = None) -> None:
    where = f" (line {lineno})" if lineno is not None else ""
    for key, width in (("pose2d", 2), ("pose3d", 3), ("relative3d", 3)):
        if rec.get(key) is None:
            continue
        shape = np.shape(rec[key])
        if shape != (joint_count, width):
            raise PoseFileError(
                f"record {rec.get('id')!r}{where}: {key} has shape {shape}, "
                f"expected ({joint_count}, {width})"
            )


def read_pose_file(path) -> tuple[dict, list[dict]]:
    """Return ``(header, records)`` with pose arrays converted to numpy."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise PoseFileError(f"{path}: empty pose file (no header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise PoseFileError(f"{path}: bad header: {exc}") from None
    major = str(header.get("version", "")).split(".")[0]
    if major != VERSION.split(".")[0]:
        raise PoseFileError(f"{path}: unsupported pose file version {header.get('version')!r}")
    joint_count = int(header["joint_count"])
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PoseFileError(f"{path}:{lineno}: {exc}") from None
        _check_record(rec, joint_count, lineno)
        for key in ("pose2d", "pose3d", "relative3d"):
            if rec.get(key) is not None:
                rec[key] = np.asarray(rec[key], dtype=np.float64)
        rec.setdefault("root_index", 0)
        records.append(rec)
    return header, records


def record_camera(rec: dict) -> CameraIntrinsics | None:
    cam = rec.get("camera")
    if cam is None:
        return None
    return CameraIntrinsics(float(cam["alpha"]), float(cam["cx"]), float(cam["cy"]))


def samples_to_records(samples, prefix: str = "s") -> list[dict]:
    return [
        {
            "id": f"{prefix}{i:06d}",
            "root_index": s.root_index,
            "pose2d": s.pose2d,
            "pose3d": s.pose3d,
            "camera": {"alpha": s.cam.alpha, "cx": s.cam.cx, "cy": s.cam.cy},
        }
        for i, s in enumerate(samples)
    ]


def records_to_dataset(records: list[dict]) -> PoseDataset:
    """Build a training/evaluation dataset; every record needs 2D, 3D and a camera."""
    if not records:
        raise PoseFileError("no records")
    missing = [
        r.get("id") for r in records if r.get("pose2d") is None or r.get("pose3d") is None
        or r.get("camera") is None
    ]  # fmt: skip
    if missing:
        raise PoseFileError(f"records lack pose2d/pose3d/camera: {missing[:5]}")
    roots = {int(r["root_index"]) for r in records}
    if len(roots) != 1:
        raise PoseFileError("records disagree on root_index")
    cams = [record_camera(r) for r in records]
    return PoseDataset(
        pose2d=np.stack([r["pose2d"] for r in records]),
        pose3d=np.stack([r["pose3d"] for r in records]),
        principal=np.stack([c.principal for c in cams]),
        alpha=np.array([c.alpha for c in cams]),
        root_index=roots.pop(),
    )
