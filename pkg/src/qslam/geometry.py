"""Projective geometry for object-landmark SLAM.

SE(3) camera poses, ellipsoids represented as constrained dual quadrics,
their projection to image conics, and the bounding-box sensor model that
predicts what an object detector would report for an ellipsoid seen from
a given camera.

Conventions:
    - A pose stores the camera-to-world transform: X_world = R @ X_cam + t.
      The projection matrix is built from the inverse (world-to-camera)
      transform, P = K [R^T | -R^T t].
    - Twists are ordered (omega, v): rotation first, translation last.
    - Dual quadrics Q* act on planes (pi^T Q* pi = 0) and dual conics C*
      act on image lines (l^T C* l = 0); both are homogeneous, defined
      only up to scale.
    - Image borders sit at pixel coordinates 0 and width/height exactly;
      boxes are continuous vectors, no half-pixel offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import DEFAULT_TOLERANCES, Tolerances
from .errors import BehindCamera, NotAnEllipse, NotVisible

_SMALL_ANGLE = 1e-10


# ----------------------------------------------------------------------
# SO(3) / SE(3) primitives
# ----------------------------------------------------------------------


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues formula: axis-angle 3-vector to rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (math.sin(angle) / angle) * K
        + ((1.0 - math.cos(angle)) / angle**2) * (K @ K)
    )


def so3_log(R) -> np.ndarray:
    """Rotation matrix to axis-angle 3-vector, stable near 0 and pi."""
    R = np.asarray(R, dtype=float)
    cos_angle = max(-1.0, min(1.0, 0.5 * (np.trace(R) - 1.0)))
    angle = math.acos(cos_angle)
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < _SMALL_ANGLE:
        return vee
    if math.pi - angle < 1e-6:
        # R ~ I + 2 K(axis)^2, so (R + I)/2 ~ axis axis^T
        A = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(A)))
        axis = A[:, k] / math.sqrt(max(A[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, vee) < 0.0:
            axis = -axis
        return angle * axis
    return (angle / math.sin(angle)) * vee


def _left_jacobian(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        + ((1.0 - math.cos(angle)) / a2) * K
        + ((angle - math.sin(angle)) / (a2 * angle)) * (K @ K)
    )


def _left_jacobian_inv(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    a2 = angle * angle
    coeff = (1.0 - (angle * math.sin(angle)) / (2.0 * (1.0 - math.cos(angle)))) / a2
    return np.eye(3) - 0.5 * K + coeff * (K @ K)


def se3_exp(xi):
    """Twist (omega, v) to (R, t)."""
    xi = np.asarray(xi, dtype=float)
    omega, v = xi[:3], xi[3:]
    return so3_exp(omega), _left_jacobian(omega) @ v


def se3_log(R, t) -> np.ndarray:
    """(R, t) to twist (omega, v)."""
    omega = so3_log(R)
    v = _left_jacobian_inv(omega) @ np.asarray(t, dtype=float)
    return np.concatenate([omega, v])


# ----------------------------------------------------------------------
# Domain types
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SE3Pose:
    """Rigid camera/robot pose: X_world = rotation @ X_cam + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be a 3x3 matrix")
        tol = DEFAULT_TOLERANCES.rotation_orthonormality
        if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise ValueError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "SE3Pose":
        return SE3Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class ConstrainedDualQuadric:
    """Ellipsoid landmark: axis-angle rotation, centroid, semi-axis lengths."""

    theta: np.ndarray
    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(3)
        t = np.array(self.t, dtype=float).reshape(3)
        s = np.array(self.s, dtype=float).reshape(3)
        if not np.all(s > 0):
            raise ValueError("semi-axis lengths must be positive")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "_rotation", so3_exp(theta))

    @property
    def rotation(self) -> np.ndarray:
        return self._rotation

    def dual_matrix(self) -> np.ndarray:
        return quadric_from_params(self)


@dataclass(frozen=True)
class GeneralDualQuadric:
    """Unconstrained dual quadric: the 10 independent elements of Q*.

    Element order is the upper triangle of the symmetric 4x4, row-major:
    (Q11, Q12, Q13, Q14, Q22, Q23, Q24, Q33, Q34, Q44).
    """

    qhat: np.ndarray

    def __post_init__(self):
        q = np.array(self.qhat, dtype=float).reshape(10)
        if np.linalg.norm(q) == 0.0:
            raise ValueError("qhat must be nonzero")
        object.__setattr__(self, "qhat", q)

    @classmethod
    def from_matrix(cls, Q) -> "GeneralDualQuadric":
        return cls(vectorize_dual_quadric(Q))

    def matrix(self) -> np.ndarray:
        return dual_quadric_from_vector(self.qhat)


_UPPER_TRI = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]


def vectorize_dual_quadric(Q) -> np.ndarray:
    """Symmetric 4x4 to its 10-vector of independent elements."""
    Q = np.asarray(Q, dtype=float)
    return np.array([Q[i, j] for i, j in _UPPER_TRI])


def dual_quadric_from_vector(qhat) -> np.ndarray:
    qhat = np.asarray(qhat, dtype=float)
    Q = np.zeros((4, 4))
    for value, (i, j) in zip(qhat, _UPPER_TRI):
        Q[i, j] = value
        Q[j, i] = value
    return Q


def _check_symmetric(M, name: str, tol: Tolerances):
    scale = np.linalg.norm(M)
    if scale > 0 and np.abs(M - M.T).max() > tol.matrix_symmetry_rel * scale:
        raise ValueError(f"{name} matrix must be symmetric")


@dataclass(frozen=True)
class DualConic:
    """Image of a dual quadric: l^T C* l = 0 for tangent lines l."""

    cstar: np.ndarray

    def __post_init__(self):
        C = np.array(self.cstar, dtype=float)
        if C.shape != (3, 3):
            raise ValueError("dual conic must be 3x3")
        _check_symmetric(C, "dual conic", DEFAULT_TOLERANCES)
        object.__setattr__(self, "cstar", 0.5 * (C + C.T))


@dataclass(frozen=True)
class Conic:
    """Primal conic: p^T C p = 0 for points p on the curve."""

    c: np.ndarray

    def __post_init__(self):
        C = np.array(self.c, dtype=float)
        if C.shape != (3, 3):
            raise ValueError("conic must be 3x3")
        _check_symmetric(C, "conic", DEFAULT_TOLERANCES)
        object.__setattr__(self, "c", 0.5 * (C + C.T))


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("box min corner must not exceed max corner")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @classmethod
    def from_vector(cls, b) -> "BoundingBox":
        b = np.asarray(b, dtype=float).reshape(4)
        return cls(float(b[0]), float(b[1]), float(b[2]), float(b[3]))


@dataclass(frozen=True)
class Plane:
    """Homogeneous plane pi: points X on the plane satisfy pi^T X = 0."""

    pi: np.ndarray

    def __post_init__(self):
        p = np.array(self.pi, dtype=float).reshape(4)
        object.__setattr__(self, "pi", p)


@dataclass(frozen=True)
class Line2D:
    """Homogeneous image line l: pixels p on the line satisfy l^T p = 0."""

    l: np.ndarray

    def __post_init__(self):
        v = np.array(self.l, dtype=float).reshape(3)
        object.__setattr__(self, "l", v)


# ----------------------------------------------------------------------
# Pose operations
# ----------------------------------------------------------------------


def pose_compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    """Group composition a . b."""
    return SE3Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def pose_between(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    """Relative pose a^-1 . b, so that a . result == b."""
    Rt = a.rotation.T
    return SE3Pose(Rt @ b.rotation, Rt @ (b.translation - a.translation))


def pose_retract(p: SE3Pose, delta) -> SE3Pose:
    """Manifold update: p composed with exp of the twist (omega, v)."""
    R, t = se3_exp(delta)
    return SE3Pose(p.rotation @ R, p.rotation @ t + p.translation)


def pose_log(p: SE3Pose) -> np.ndarray:
    """SE(3) log map of a pose, twist ordered (omega, v)."""
    return se3_log(p.rotation, p.translation)


def projection_matrix(pose: SE3Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """3x4 camera matrix P = K [R | t] of the world-to-camera transform."""
    Rcw = pose.rotation.T
    tcw = -Rcw @ pose.translation
    return intrinsics.matrix @ np.hstack([Rcw, tcw[:, None]])


def point_depth(pose: SE3Pose, point) -> float:
    """Depth (camera-frame z) of a world point."""
    return float((pose.rotation.T @ (np.asarray(point, dtype=float) - pose.translation))[2])


# ----------------------------------------------------------------------
# Quadric and conic operations
# ----------------------------------------------------------------------


def quadric_from_params(q: ConstrainedDualQuadric) -> np.ndarray:
    """Expand the 9-vector parametrization into the full 4x4 dual quadric.

    Q* = Z diag(s1^2, s2^2, s3^2, -1) Z^T with Z the rigid transform of
    the ellipsoid; blockwise this is [[R S R^T - t t^T, -t], [-t^T, -1]].
    """
    R = q.rotation
    core = R @ np.diag(q.s**2) @ R.T
    Q = np.empty((4, 4))
    Q[:3, :3] = core - np.outer(q.t, q.t)
    Q[:3, 3] = -q.t
    Q[3, :3] = -q.t
    Q[3, 3] = -1.0
    return Q


def project_quadric(P, Q) -> DualConic:
    """Project a dual quadric through a 3x4 camera matrix: C* = P Q* P^T."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    C = P @ Q @ P.T
    return DualConic(0.5 * (C + C.T))


def adjugate3(M) -> np.ndarray:
    """Adjugate of a 3x3 matrix: M @ adj(M) = det(M) I, valid for singular M."""
    M = np.asarray(M, dtype=float)
    a, b, c = M[0]
    d, e, f = M[1]
    g, h, i = M[2]
    return np.array(
        [
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ]
    )


def adjugate4(M) -> np.ndarray:
    """Adjugate of a 4x4 matrix via cofactor expansion."""
    M = np.asarray(M, dtype=float)
    out = np.empty((4, 4))
    rows = np.arange(4)
    for i in range(4):
        for j in range(4):
            minor = M[np.ix_(rows != i, rows != j)]
            out[j, i] = (-1.0) ** (i + j) * np.linalg.det(minor)
    return out


def _normalized_ellipse(conic: Conic, tol: Tolerances) -> np.ndarray:
    """Return C scaled so interior points give p^T C p < 0, or raise.

    Ellipse test: det of the upper-left 2x2 block positive (relative to
    the conic norm). A camera inside or beside the ellipsoid projects a
    hyperbola; that is surfaced as NotAnEllipse rather than boxed.
    """
    C = conic.c
    det33 = C[0, 0] * C[1, 1] - C[0, 1] * C[1, 0]
    scale = float(np.linalg.norm(C))
    if scale == 0.0 or det33 <= tol.ellipse_det_rel * scale * scale:
        raise NotAnEllipse("conic is not an ellipse")
    if C[0, 0] + C[1, 1] < 0.0:
        C = -C
    return C


def _quadratic_roots(a: float, b: float, c: float, tol: Tolerances):
    """Real roots of a t^2 + b t + c = 0, sorted; double roots once."""
    scale = abs(a) + abs(b) + abs(c)
    if scale == 0.0:
        return ()
    if abs(a) <= 1e-14 * scale:
        if abs(b) <= 1e-14 * scale:
            return ()
        return (-c / b,)
    disc = b * b - 4.0 * a * c
    band = tol.quadratic_disc_rel * (b * b + abs(4.0 * a * c))
    if disc < -band:
        return ()
    if disc < band:
        return (-b / (2.0 * a),)
    sq = math.sqrt(disc)
    q = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
    r1, r2 = q / a, c / q
    return (r1, r2) if r1 <= r2 else (r2, r1)


def conic_extrema_points(conic: Conic, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """The four points of an ellipse with extremal x and y coordinates.

    Solved on the dual conic: axis-aligned tangent lines l = (1, 0, -x)
    and (0, 1, -y) satisfy l^T C* l = 0, giving one quadratic per axis.
    At a tangent abscissa the restricted conic has a double root, which
    yields the other coordinate directly.
    """
    C = _normalized_ellipse(conic, tol)
    D = adjugate3(C)
    points = []
    for x in _quadratic_roots(D[2, 2], -2.0 * D[0, 2], D[0, 0], tol):
        points.append((x, -(C[0, 1] * x + C[1, 2]) / C[1, 1]))
    for y in _quadratic_roots(D[2, 2], -2.0 * D[1, 2], D[1, 1], tol):
        points.append((-(C[0, 1] * y + C[0, 2]) / C[0, 0], y))
    return np.array(points) if points else np.empty((0, 2))


def conic_border_intersections(
    conic: Conic, intrinsics: CameraIntrinsics, tol: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """Real intersections of the conic with the four image border lines.

    The borders are the full lines x=0, y=0, x=width, y=height; points
    beyond the image corners are kept here and filtered by the caller.
    Complex root pairs are dropped, tangential contacts reported once.
    """
    C = conic.c
    w, h = float(intrinsics.width), float(intrinsics.height)
    points = []
    for x0 in (0.0, w):
        a = C[1, 1]
        b = 2.0 * (C[0, 1] * x0 + C[1, 2])
        c = C[0, 0] * x0 * x0 + 2.0 * C[0, 2] * x0 + C[2, 2]
        points.extend((x0, y) for y in _quadratic_roots(a, b, c, tol))
    for y0 in (0.0, h):
        a = C[0, 0]
        b = 2.0 * (C[0, 1] * y0 + C[0, 2])
        c = C[1, 1] * y0 * y0 + 2.0 * C[1, 2] * y0 + C[2, 2]
        points.extend((x, y0) for x in _quadratic_roots(a, b, c, tol))
    return np.array(points) if points else np.empty((0, 2))


def bbox_of_conic_on_image(
    conic: Conic, intrinsics: CameraIntrinsics, tol: Tolerances = DEFAULT_TOLERANCES
) -> BoundingBox:
    """Minimal axis-aligned box around the visible portion of an ellipse.

    Candidates are the conic extrema plus the border intersections;
    candidates outside the image rectangle are removed and the box is the
    componentwise min/max of what remains.
    """
    extrema = conic_extrema_points(conic, tol)
    border = conic_border_intersections(conic, intrinsics, tol)
    candidates = np.vstack([extrema, border])
    if candidates.shape[0] == 0:
        raise NotVisible("conic has no finite extrema or border crossings")
    w, h = float(intrinsics.width), float(intrinsics.height)
    eps = tol.border_inclusion_px
    inside = (
        (candidates[:, 0] >= -eps)
        & (candidates[:, 0] <= w + eps)
        & (candidates[:, 1] >= -eps)
        & (candidates[:, 1] <= h + eps)
    )
    kept = candidates[inside]
    if kept.shape[0] == 0:
        raise NotVisible("conic does not intersect the image rectangle")
    kept = np.clip(kept, [0.0, 0.0], [w, h])
    return BoundingBox(
        float(kept[:, 0].min()),
        float(kept[:, 1].min()),
        float(kept[:, 0].max()),
        float(kept[:, 1].max()),
    )


def predict_bbox(
    pose: SE3Pose,
    intrinsics: CameraIntrinsics,
    quadric: ConstrainedDualQuadric,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> BoundingBox:
    """Sensor model: the detector box predicted for a quadric from a pose.

    Chain: expand the constrained parameters, project to a dual conic,
    take the adjugate for the primal conic, then box its on-image part.
    """
    if point_depth(pose, quadric.t) <= 0.0:
        raise BehindCamera("quadric centroid is not in front of the camera")
    P = projection_matrix(pose, intrinsics)
    cstar = project_quadric(P, quadric_from_params(quadric))
    conic = Conic(adjugate3(cstar.cstar))
    return bbox_of_conic_on_image(conic, intrinsics, tol)


def bbox_to_lines(b: BoundingBox) -> list[Line2D]:
    """The four border lines of a box, in (x_min, y_min, x_max, y_max) order."""
    return [
        Line2D([1.0, 0.0, -b.x_min]),
        Line2D([0.0, 1.0, -b.y_min]),
        Line2D([1.0, 0.0, -b.x_max]),
        Line2D([0.0, 1.0, -b.y_max]),
    ]


def back_project_line(P, line: Line2D) -> Plane:
    """Back-project an image line through the camera: pi = P^T l."""
    P = np.asarray(P, dtype=float)
    return Plane(P.T @ line.l)
