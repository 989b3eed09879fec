"""End-to-end solve: odometry chaining, landmark init, graph optimize.

Bridges simulator/dataset records to the factor graph. Covariances come
from the injected noise magnitudes when the noise specification is
known, otherwise from a fixed real-data-style default (standard
deviation 0.001 for translation and rotation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import DEFAULT_TOLERANCES
from .errors import (
    BehindAllCameras,
    InsufficientObservations,
    NotEllipsoidal,
    ZeroScale,
)
from .geometry import SE3Pose, so3_log
from .graph import BBoxFactor, FactorGraph, OdometryFactor, SolverConfig, optimize
from .initializer import (
    MIN_DETECTIONS_DEFAULT,
    LandmarkObservations,
    initialize_landmark,
)
from .simulator import NoiseSpec, chain_odometry

DEFAULT_ODOMETRY_SIGMA = 1e-3
_STD_FLOOR = math.sqrt(DEFAULT_TOLERANCES.covariance_floor)


@dataclass(frozen=True)
class SolveOptions:
    error_mode: str = "geometric"
    solver: SolverConfig = field(default_factory=SolverConfig)
    min_detections: int = MIN_DETECTIONS_DEFAULT
    keep_behind_camera_landmarks: bool = False
    # (max width std, max height std) in pixels; None disables rejection
    reject_bbox_std: tuple | None = None
    # "fixed": detection sigma from the noise spec; "per_object_wh_std":
    # sigma per object as the sum of its width and height standard
    # deviations over all its detections
    bbox_sigma_mode: str = "fixed"


@dataclass
class SolveResult:
    poses: list
    initial_poses: list
    initial_landmarks: dict
    landmarks: dict
    excluded: list  # (landmark id, reason)
    cost_trace: list
    skip_events: list
    iterations: int
    converged: bool
    error_mode: str


def odometry_sigma(u: SE3Pose, noise: NoiseSpec | None) -> np.ndarray:
    """6x6 odometry covariance for one measured step, (rotation, translation)."""
    if noise is None:
        rot_std = trans_std = DEFAULT_ODOMETRY_SIGMA
    else:
        angle = float(np.linalg.norm(so3_log(u.rotation)))
        rot_std = max(noise.rot_fraction * angle, _STD_FLOOR)
        trans_std = max(noise.trans_fraction * float(np.linalg.norm(u.translation)), _STD_FLOOR)
    return np.diag([rot_std**2] * 3 + [trans_std**2] * 3)


def _bbox_std_by_object(detections) -> dict:
    widths: dict[int, list] = {}
    heights: dict[int, list] = {}
    for det in detections:
        widths.setdefault(det.object_id, []).append(det.bbox.width)
        heights.setdefault(det.object_id, []).append(det.bbox.height)
    return {
        oid: (float(np.std(widths[oid])), float(np.std(heights[oid])))
        for oid in widths
    }


def solve_trial(
    odometry,
    detections,
    intrinsics,
    start_pose: SE3Pose | None = None,
    noise: NoiseSpec | None = None,
    options: SolveOptions = SolveOptions(),
) -> SolveResult:
    """Initialize from raw measurements and run the MAP optimization.

    Poses start from the chained odometry (anchored at `start_pose` when
    the dataset records one); landmarks start from the multi-view SVD
    fit. Landmarks that cannot be initialized are excluded and reported
    rather than aborting the solve.
    """
    start = start_pose if start_pose is not None else SE3Pose.identity()
    initial_poses = chain_odometry(start, odometry)

    stats = _bbox_std_by_object(detections)
    excluded: list = []
    active_ids = []
    for oid in sorted(stats):
        if options.reject_bbox_std is not None:
            w_max, h_max = options.reject_bbox_std
            w_std, h_std = stats[oid]
            if w_std > w_max or h_std > h_max:
                excluded.append((oid, "bbox_std"))
                continue
        active_ids.append(oid)

    grouped: dict[int, list] = {oid: [] for oid in active_ids}
    for det in detections:
        if det.object_id in grouped:
            grouped[det.object_id].append((det.frame, det.bbox))

    initial_landmarks: dict = {}
    for oid in active_ids:
        obs = LandmarkObservations(oid, grouped[oid])
        try:
            initial_landmarks[oid] = initialize_landmark(
                obs, initial_poses, intrinsics, options.min_detections
            )
        except BehindAllCameras as exc:
            if options.keep_behind_camera_landmarks:
                initial_landmarks[oid] = exc.quadric
            else:
                excluded.append((oid, "behind_all_cameras"))
        except (InsufficientObservations, NotEllipsoidal, ZeroScale) as exc:
            excluded.append((oid, type(exc).__name__))

    landmark_ids = sorted(initial_landmarks)
    index_of = {oid: j for j, oid in enumerate(landmark_ids)}

    odo_factors = [
        OdometryFactor(i, u, odometry_sigma(u, noise)) for i, u in enumerate(odometry)
    ]
    det_sigma = noise.det_sigma_px if noise is not None else 1.0
    bbox_factors = []
    for det in detections:
        if det.object_id not in index_of:
            continue
        if options.bbox_sigma_mode == "per_object_wh_std":
            sigma = max(sum(stats[det.object_id]), _STD_FLOOR)
        else:
            sigma = max(det_sigma, _STD_FLOOR)
        bbox_factors.append(
            BBoxFactor(det.frame, index_of[det.object_id], det.bbox, np.eye(4) * sigma**2)
        )

    graph = FactorGraph(
        initial_poses,
        [initial_landmarks[oid] for oid in landmark_ids],
        odo_factors,
        bbox_factors,
        intrinsics,
        options.error_mode,
    )
    result = optimize(graph, options.solver)
    landmarks = {oid: result.quadrics[index_of[oid]] for oid in landmark_ids}
    return SolveResult(
        poses=result.poses,
        initial_poses=initial_poses,
        initial_landmarks=initial_landmarks,
        landmarks=landmarks,
        excluded=excluded,
        cost_trace=result.cost_trace,
        skip_events=result.skip_events,
        iterations=result.iterations,
        converged=result.converged,
        error_mode=options.error_mode,
    )
