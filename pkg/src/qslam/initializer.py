"""Landmark initialization from multi-view bounding-box detections.

Each detection contributes four image lines whose back-projected planes
must be tangent to the landmark's dual quadric (pi^T Q* pi = 0). Writing
that constraint out for the 10 independent elements of Q* gives one
linear equation per plane; stacking them over all views yields A q = 0,
solved by SVD and then constrained to an ellipsoid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .constants import DEFAULT_TOLERANCES, Tolerances
from .errors import (
    BehindAllCameras,
    InsufficientObservations,
    NotEllipsoidal,
    RankDeficient,
    ZeroScale,
)
from .geometry import (
    BoundingBox,
    CameraIntrinsics,
    ConstrainedDualQuadric,
    GeneralDualQuadric,
    Plane,
    SE3Pose,
    adjugate4,
    back_project_line,
    bbox_to_lines,
    point_depth,
    projection_matrix,
    so3_log,
)

MIN_DETECTIONS_DEFAULT = 3


@dataclass(frozen=True)
class LandmarkObservations:
    """All detections of one landmark: (pose index, box) pairs."""

    landmark_id: int
    entries: tuple

    def __post_init__(self):
        entries = tuple((int(i), box) for i, box in self.entries)
        if len(entries) < 1:
            raise ValueError("a landmark needs at least one observation")
        object.__setattr__(self, "entries", entries)


def plane_row(pi: Plane) -> np.ndarray:
    """Coefficient row r such that r . qhat = pi^T Q*(qhat) pi.

    Expects a unit-norm plane; the row follows the symmetric expansion
    (p1^2, 2 p1 p2, 2 p1 p3, 2 p1 p4, p2^2, 2 p2 p3, 2 p2 p4,
     p3^2, 2 p3 p4, p4^2).
    """
    p1, p2, p3, p4 = pi.pi
    return np.array(
        [
            p1 * p1,
            2.0 * p1 * p2,
            2.0 * p1 * p3,
            2.0 * p1 * p4,
            p2 * p2,
            2.0 * p2 * p3,
            2.0 * p2 * p4,
            p3 * p3,
            2.0 * p3 * p4,
            p4 * p4,
        ]
    )


def assemble_system(
    obs: LandmarkObservations,
    poses: list[SE3Pose],
    intrinsics: CameraIntrinsics,
) -> np.ndarray:
    """Stack the tangency rows of every observed box into A (4n x 10).

    Rows are unit-normalized so views with different plane scales weigh
    equally in the SVD.
    """
    if 4 * len(obs.entries) < 10:
        raise InsufficientObservations(
            f"{len(obs.entries)} observations give {4 * len(obs.entries)} rows; need >= 10"
        )
    rows = []
    for pose_index, box in obs.entries:
        P = projection_matrix(poses[pose_index], intrinsics)
        for line in bbox_to_lines(box):
            pi = back_project_line(P, line).pi
            pi = pi / np.linalg.norm(pi)
            rows.append(plane_row(Plane(pi)))
    A = np.array(rows)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    return A


def svd_min_solution(A, tol: Tolerances = DEFAULT_TOLERANCES) -> GeneralDualQuadric:
    """Unit-norm qhat minimizing ||A qhat||: last right-singular vector."""
    A = np.asarray(A, dtype=float)
    _, sv, vt = np.linalg.svd(A)
    if sv.shape[0] >= 10 and abs(sv[-1] - sv[-2]) <= tol.rank_gap:
        warnings.warn(
            "two smallest singular values coincide; the quadric solution is not unique",
            RankDeficient,
        )
    qhat = vt[-1]
    return GeneralDualQuadric(qhat)


def extract_constrained(
    qhat: GeneralDualQuadric, tol: Tolerances = DEFAULT_TOLERANCES
) -> ConstrainedDualQuadric:
    """Constrain a generic dual quadric to an ellipsoid.

    Translation comes from the last column of Q*; rotation is the
    eigenvector matrix of the primal block Q_33; semi-axes follow
    s_i = sqrt(-det Q / det Q_33 / lambda_i) with lambda_i the
    eigenvalues of Q_33 (the expression is invariant to the scale and
    sign of the homogeneous quadric).
    """
    Qstar = qhat.matrix()
    scale = np.linalg.norm(Qstar)
    if abs(Qstar[3, 3]) <= 1e-14 * scale:
        raise NotEllipsoidal("quadric centroid lies at infinity")
    if Qstar[3, 3] > 0.0:
        Qstar = -Qstar
    Qstar = Qstar / -Qstar[3, 3]
    t = -Qstar[:3, 3]

    Q = adjugate4(Qstar)
    Q33 = Q[:3, :3]
    lam, vecs = np.linalg.eigh(Q33)
    if np.any(np.abs(lam) <= tol.zero_eigenvalue_rel * np.linalg.norm(Q)):
        raise ZeroScale("primal quadric has a zero eigenvalue")
    if not (np.all(lam > 0.0) or np.all(lam < 0.0)):
        raise NotEllipsoidal("surface is not an ellipsoid (mixed eigenvalue signs)")

    ratio = -np.linalg.det(Q) / np.linalg.det(Q33)
    squared = ratio / lam
    if np.any(squared <= 0.0):
        raise NotEllipsoidal("quadric has no real semi-axes")
    s = np.sqrt(squared)

    # deterministic ordering: semi-axes descending, rotation columns follow
    order = np.argsort(-s)
    s = s[order]
    R = vecs[:, order]
    if np.linalg.det(R) < 0.0:
        R = R.copy()
        R[:, 2] = -R[:, 2]
    return ConstrainedDualQuadric(so3_log(R), t, s)


def initialize_landmark(
    obs: LandmarkObservations,
    poses: list[SE3Pose],
    intrinsics: CameraIntrinsics,
    min_detections: int = MIN_DETECTIONS_DEFAULT,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> ConstrainedDualQuadric:
    """Full initialization chain: assemble, SVD, constrain, depth check.

    Raises BehindAllCameras (carrying the extracted quadric) when the
    recovered centroid has non-positive depth in every observing camera;
    such landmarks are excluded from the graph by default.
    """
    if len(obs.entries) < min_detections:
        raise InsufficientObservations(
            f"landmark {obs.landmark_id}: {len(obs.entries)} detections < minimum {min_detections}"
        )
    A = assemble_system(obs, poses, intrinsics)
    qhat = svd_min_solution(A, tol)
    quadric = extract_constrained(qhat, tol)
    depths = [point_depth(poses[i], quadric.t) for i, _ in obs.entries]
    if all(d <= 0.0 for d in depths):
        raise BehindAllCameras(quadric)
    return quadric


def observations_from_detections(detections) -> list[LandmarkObservations]:
    """Group (frame, object_id, box) detection records by landmark id."""
    grouped: dict[int, list] = {}
    for det in detections:
        grouped.setdefault(det.object_id, []).append((det.frame, det.bbox))
    return [
        LandmarkObservations(object_id, entries)
        for object_id, entries in sorted(grouped.items())
    ]
