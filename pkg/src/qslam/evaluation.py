"""Trajectory and landmark quality metrics, plus class-score fusion.

Landmark shape is compared through 3D axis-aligned boxes: the tight AABB
of the estimated ellipsoid against the ground-truth object box, as the
Jaccard distance (1 - IoU) either in place (quality) or after centering
both boxes at the origin (shape).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDetections, LengthMismatch, NoMatchedLandmarks
from .geometry import ConstrainedDualQuadric, SE3Pose, pose_between, pose_compose


def ate_trans(estimate, truth) -> float:
    """Absolute trajectory error: translation RMSE after aligning the
    first pose of the estimate onto the first pose of the truth."""
    if len(estimate) != len(truth):
        raise LengthMismatch(f"{len(estimate)} estimated vs {len(truth)} true poses")
    align = pose_compose(truth[0], estimate[0].inverse())
    sq = 0.0
    for est, ref in zip(estimate, truth):
        aligned = pose_compose(align, est)
        sq += float(np.sum((aligned.translation - ref.translation) ** 2))
    return float(np.sqrt(sq / len(truth)))


def quadric_aabb(q: ConstrainedDualQuadric):
    """Tight axis-aligned bounding box of an ellipsoid.

    The half-extent along world axis k is sqrt(sum_i (R_ki s_i)^2).
    """
    R = q.rotation
    half = np.sqrt(np.sum((R * q.s[None, :]) ** 2, axis=1))
    return q.t - half, q.t + half


def _iou(box_a, box_b) -> float:
    lo_a, hi_a = (np.asarray(v, dtype=float) for v in box_a)
    lo_b, hi_b = (np.asarray(v, dtype=float) for v in box_b)
    sides = np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b)
    inter = float(np.prod(np.maximum(sides, 0.0)))
    union = float(np.prod(hi_a - lo_a)) + float(np.prod(hi_b - lo_b)) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def quality_jaccard(box_a, box_b) -> float:
    """Standard Jaccard distance (1 - IoU) between two 3D boxes in place."""
    return 1.0 - _iou(box_a, box_b)


def centered_jaccard(box_a, box_b) -> float:
    """Jaccard distance after moving both box centroids to the origin."""
    centered = []
    for lo, hi in (box_a, box_b):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        c = 0.5 * (lo + hi)
        centered.append((lo - c, hi - c))
    return quality_jaccard(*centered)


def lm_trans_rmse(estimated: dict, truth_centroids: dict) -> float:
    """RMSE of matched landmark centroid distances.

    `estimated` maps landmark id to ConstrainedDualQuadric and
    `truth_centroids` maps id to 3-vector; ids present only in the truth
    are excluded (reported by the caller).
    """
    matched = sorted(set(estimated) & set(truth_centroids))
    if not matched:
        raise NoMatchedLandmarks("no landmark id matches between estimate and truth")
    sq = 0.0
    for key in matched:
        diff = estimated[key].t - np.asarray(truth_centroids[key], dtype=float)
        sq += float(diff @ diff)
    return float(np.sqrt(sq / len(matched)))


def fuse_class_scores(score_vectors):
    """Average the per-detection score distributions of one object.

    Returns (label index, fused distribution); the label is the argmax
    with ties broken toward the lowest class index.
    """
    vectors = [np.asarray(v, dtype=float) for v in score_vectors]
    if not vectors:
        raise EmptyDetections("class fusion needs at least one detection")
    fused = np.mean(vectors, axis=0)
    return int(np.argmax(fused)), fused


@dataclass
class LandmarkReport:
    landmark_id: int
    trans_error: float
    shape_jaccard: float
    quality_jaccard: float
    fused_label: int = -1


@dataclass
class TrialReport:
    """Per-trial metric bundle for one estimation method."""

    ate_trans: float
    lm_trans_rmse: float
    lm_shape_jaccard: float
    lm_quality_jaccard: float
    landmarks: list = field(default_factory=list)
    unmatched_truth_ids: list = field(default_factory=list)
    solver_stats: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "ate_trans": self.ate_trans,
            "lm_trans_rmse": self.lm_trans_rmse,
            "lm_shape_jaccard": self.lm_shape_jaccard,
            "lm_quality_jaccard": self.lm_quality_jaccard,
            "landmarks": [vars(lm) for lm in self.landmarks],
            "unmatched_truth_ids": list(self.unmatched_truth_ids),
            "solver_stats": dict(self.solver_stats),
        }


def landmark_metrics(estimated: dict, scene_objects) -> tuple:
    """Per-landmark and mean metrics of estimated quadrics vs objects.

    Returns (reports, mean_trans_rmse, mean_shape, mean_quality,
    unmatched ids). Landmarks are matched by ground-truth association id.
    """
    truth = {obj.id: obj for obj in scene_objects}
    matched = sorted(set(estimated) & set(truth))
    if not matched:
        raise NoMatchedLandmarks("no landmark id matches the scene objects")
    reports = []
    for key in matched:
        q = estimated[key]
        obj = truth[key]
        est_box = quadric_aabb(q)
        true_box = (obj.aabb_min, obj.aabb_max)
        reports.append(
            LandmarkReport(
                landmark_id=key,
                trans_error=float(np.linalg.norm(q.t - obj.center)),
                shape_jaccard=centered_jaccard(est_box, true_box),
                quality_jaccard=quality_jaccard(est_box, true_box),
            )
        )
    rmse = float(np.sqrt(np.mean([r.trans_error**2 for r in reports])))
    mean_shape = float(np.mean([r.shape_jaccard for r in reports]))
    mean_quality = float(np.mean([r.quality_jaccard for r in reports]))
    unmatched = sorted(set(truth) - set(estimated))
    return reports, rmse, mean_shape, mean_quality, unmatched
