"""Dataset file formats: scene JSON, trajectory/odometry/detections JSONL.

Line-oriented, diff-friendly and language-neutral; the same formats are
the import path for externally produced detections and odometry. Readers
return the parsed records unchanged (floats survive bit-exactly through
JSON shortest-repr serialization), with separate converters to and from
the domain types, so write(read(x)) is byte-identical for files this
module wrote. All writes are atomic (temp file then rename).
"""

from __future__ import annotations

import json
import math
import os
import tempfile

import numpy as np

from .constants import DEFAULT_TOLERANCES
from .errors import DatasetError
from .geometry import BoundingBox, CameraIntrinsics, ConstrainedDualQuadric, SE3Pose
from .simulator import Detection, NoiseSpec, Scene, SceneObject


def atomic_write_text(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path) -> str:
    try:
        with open(path) as handle:
            return handle.read()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc


# ----------------------------------------------------------------------
# Quaternions (wxyz order)
# ----------------------------------------------------------------------


def quaternion_from_rotation(R) -> list:
    """Unit quaternion [qw, qx, qy, qz] of a rotation matrix, qw >= 0."""
    R = np.asarray(R, dtype=float)
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    norm = math.sqrt(sum(v * v for v in q))
    q = [v / norm for v in q]
    if q[0] < 0.0 or (q[0] == 0.0 and next((v for v in q if v != 0.0), 1.0) < 0.0):
        q = [-v for v in q]
    return q


def rotation_from_quaternion(q) -> np.ndarray:
    qw, qx, qy, qz = (float(v) for v in q)
    norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if abs(norm - 1.0) > DEFAULT_TOLERANCES.quaternion_norm:
        raise DatasetError(f"quaternion norm {norm} deviates from 1 beyond tolerance")
    qw, qx, qy, qz = qw / norm, qx / norm, qy / norm, qz / norm
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


# ----------------------------------------------------------------------
# JSONL pose files (trajectories and odometry share the schema)
# ----------------------------------------------------------------------


def pose_records(poses) -> list:
    return [
        {
            "frame": i,
            "t": [float(v) for v in p.translation],
            "q": quaternion_from_rotation(p.rotation),
        }
        for i, p in enumerate(poses)
    ]


def poses_from_records(records) -> list:
    poses = []
    for rec in records:
        try:
            R = rotation_from_quaternion(rec["q"])
            poses.append(SE3Pose(R, [float(v) for v in rec["t"]]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed pose record {rec!r}") from exc
    return poses


def _dump_jsonl(records) -> str:
    return "".join(json.dumps(rec, separators=(", ", ": ")) + "\n" for rec in records)


def _load_jsonl(path) -> list:
    records = []
    for n, line in enumerate(_read_text(path).splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{n}: invalid JSON line") from exc
    return records


def write_pose_file(path, records):
    atomic_write_text(path, _dump_jsonl(records))


def read_pose_file(path) -> list:
    return _load_jsonl(path)


# ----------------------------------------------------------------------
# Detections
# ----------------------------------------------------------------------


def detection_records(detections) -> list:
    return [
        {
            "frame": int(d.frame),
            "object_id": int(d.object_id),
            "bbox": [float(v) for v in d.bbox.vector],
            "scores": [float(v) for v in d.scores],
        }
        for d in detections
    ]


def detections_from_records(records) -> list:
    out = []
    for rec in records:
        try:
            out.append(
                Detection(
                    int(rec["frame"]),
                    int(rec["object_id"]),
                    BoundingBox.from_vector(rec["bbox"]),
                    np.asarray(rec.get("scores", []), dtype=float),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed detection record {rec!r}") from exc
    return out


def write_detections(path, records):
    atomic_write_text(path, _dump_jsonl(records))


def read_detections(path) -> list:
    return _load_jsonl(path)


# ----------------------------------------------------------------------
# Scene JSON
# ----------------------------------------------------------------------


def scene_record(scene: Scene) -> dict:
    return {
        "objects": [
            {
                "id": int(obj.id),
                "class": obj.class_label,
                "aabb_min": [float(v) for v in obj.aabb_min],
                "aabb_max": [float(v) for v in obj.aabb_max],
            }
            for obj in scene.objects
        ],
        "intrinsics": {
            "fx": scene.intrinsics.fx,
            "fy": scene.intrinsics.fy,
            "cx": scene.intrinsics.cx,
            "cy": scene.intrinsics.cy,
            "width": scene.intrinsics.width,
            "height": scene.intrinsics.height,
        },
    }


def scene_from_record(record: dict) -> Scene:
    try:
        objects = tuple(
            SceneObject(int(o["id"]), str(o["class"]), o["aabb_min"], o["aabb_max"])
            for o in record["objects"]
        )
        k = record["intrinsics"]
        intrinsics = CameraIntrinsics(
            float(k["fx"]), float(k["fy"]), float(k["cx"]),
            float(k["cy"]), float(k["width"]), float(k["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed scene record: {exc}") from exc
    return Scene(objects, intrinsics)


def write_scene(path, record: dict):
    atomic_write_text(path, json.dumps(record, indent=2) + "\n")


def read_scene(path) -> dict:
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON") from exc


# ----------------------------------------------------------------------
# Landmarks JSON and trial metadata
# ----------------------------------------------------------------------


def quadric_record(landmark_id: int, q: ConstrainedDualQuadric) -> dict:
    return {
        "id": int(landmark_id),
        "theta": [float(v) for v in q.theta],
        "t": [float(v) for v in q.t],
        "s": [float(v) for v in q.s],
    }


def quadric_from_record(rec: dict) -> ConstrainedDualQuadric:
    try:
        return ConstrainedDualQuadric(rec["theta"], rec["t"], rec["s"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed quadric record {rec!r}") from exc


def write_json(path, record):
    atomic_write_text(path, json.dumps(record, indent=2) + "\n")


def read_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON") from exc


def noise_record(noise: NoiseSpec) -> dict:
    return {
        "trans_fraction": noise.trans_fraction,
        "rot_fraction": noise.rot_fraction,
        "det_sigma_px": noise.det_sigma_px,
        "seed": noise.seed,
    }


def noise_from_record(rec: dict) -> NoiseSpec:
    try:
        return NoiseSpec(
            float(rec["trans_fraction"]),
            float(rec["rot_fraction"]),
            float(rec["det_sigma_px"]),
            int(rec.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed noise record {rec!r}") from exc


# ----------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------


def write_csv(path, header, rows):
    """Minimal deterministic CSV: floats via repr, no quoting needed."""

    def cell(value):
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")
