"""Factor graph over camera poses and quadric landmarks.

Variables are SE(3) poses and constrained dual quadrics; factors are
relative-pose odometry measurements and bounding-box detections. The MAP
estimate minimizes the sum of squared whitened residuals, solved with
dense Levenberg-Marquardt on the product manifold. The first pose is
held fixed to pin the global frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import DEFAULT_TOLERANCES, Tolerances
from .errors import (
    BehindCamera,
    DivergedDamping,
    FactorSkipped,
    NonFiniteResidual,
    NotAnEllipse,
    NotVisible,
)
from .geometry import (
    BoundingBox,
    CameraIntrinsics,
    ConstrainedDualQuadric,
    SE3Pose,
    back_project_line,
    bbox_to_lines,
    pose_between,
    pose_compose,
    pose_log,
    pose_retract,
    predict_bbox,
    projection_matrix,
    quadric_from_params,
    so3_exp,
    so3_log,
)

DAMPING_CEILING = 1e12


def _check_covariance(cov, size: int, name: str) -> np.ndarray:
    cov = np.array(cov, dtype=float)
    if cov.shape != (size, size):
        raise ValueError(f"{name} covariance must be {size}x{size}")
    if np.abs(cov - cov.T).max() > 1e-9 * max(np.abs(cov).max(), 1.0):
        raise ValueError(f"{name} covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} covariance must be positive definite") from None
    return cov


def _whiten(cov, r) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    return np.linalg.solve(L, np.asarray(r, dtype=float))


@dataclass(frozen=True)
class OdometryFactor:
    """Relative-pose measurement u between poses i and i+1."""

    i: int
    u: SE3Pose
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_covariance(self.sigma, 6, "odometry"))


@dataclass(frozen=True)
class BBoxFactor:
    """Bounding-box observation b of landmark j from pose i."""

    i: int
    j: int
    b: BoundingBox
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", _check_covariance(self.lam, 4, "bounding box"))


@dataclass
class FactorGraph:
    poses: list
    quadrics: list
    odometry_factors: list
    bbox_factors: list
    intrinsics: CameraIntrinsics
    error_mode: str = "geometric"

    def __post_init__(self):
        if self.error_mode not in ("geometric", "algebraic"):
            raise ValueError("error_mode must be 'geometric' or 'algebraic'")
        n, m = len(self.poses), len(self.quadrics)
        for f in self.odometry_factors:
            if not 0 <= f.i < n - 1:
                raise ValueError(f"odometry factor index {f.i} out of range")
        for f in self.bbox_factors:
            if not 0 <= f.i < n or not 0 <= f.j < m:
                raise ValueError(f"bbox factor indices ({f.i}, {f.j}) out of range")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-5
    damping_up_factor: float = 10.0
    damping_down_factor: float = 10.0
    relative_cost_tolerance: float = 1e-6
    jacobian_step: float = 1e-6

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) <= 0:
                raise ValueError(f"solver config field {name} must be positive")


@dataclass(frozen=True)
class SkipEvent:
    iteration: int
    pose_index: int
    landmark_index: int
    reason: str


@dataclass
class OptimizeResult:
    poses: list
    quadrics: list
    cost_trace: list
    skip_events: list
    iterations: int
    converged: bool


# ----------------------------------------------------------------------
# Residuals
# ----------------------------------------------------------------------


def odometry_residual(f: OdometryFactor, xi: SE3Pose, xnext: SE3Pose) -> np.ndarray:
    """Whitened SE(3) log of the motion-model error (x_i . u)^-1 . x_{i+1}."""
    err = pose_between(pose_compose(xi, f.u), xnext)
    return _whiten(f.sigma, pose_log(err))


def bbox_residual(
    f: BBoxFactor,
    xi: SE3Pose,
    qj: ConstrainedDualQuadric,
    intrinsics: CameraIntrinsics,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """Whitened geometric error: observed minus predicted box corners."""
    try:
        predicted = predict_bbox(xi, intrinsics, qj, tol)
    except (BehindCamera, NotAnEllipse, NotVisible) as exc:
        raise FactorSkipped(type(exc).__name__) from exc
    return _whiten(f.lam, f.b.vector - predicted.vector)


def algebraic_residual(
    f: BBoxFactor,
    xi: SE3Pose,
    qj: ConstrainedDualQuadric,
    intrinsics: CameraIntrinsics,
) -> np.ndarray:
    """Whitened tangency defects pi_k^T Q* pi_k of the observed box lines.

    Planes are unit-normalized and Q* is normalized to unit Frobenius
    norm, so the residual is invariant to the homogeneous scales.
    """
    P = projection_matrix(xi, intrinsics)
    Q = quadric_from_params(qj)
    Q = Q / np.linalg.norm(Q)
    values = []
    for line in bbox_to_lines(f.b):
        pi = back_project_line(P, line).pi
        pi = pi / np.linalg.norm(pi)
        values.append(pi @ Q @ pi)
    return _whiten(f.lam, np.array(values))


# ----------------------------------------------------------------------
# Manifold blocks and numeric differentiation
# ----------------------------------------------------------------------


def retract_quadric(q: ConstrainedDualQuadric, delta) -> ConstrainedDualQuadric:
    """Update a quadric by a 9-vector (dtheta, dt, ds).

    Rotation composes with exp(dtheta) on the right, translation is
    additive, and semi-axes update multiplicatively (s * exp(ds)) so
    positivity is preserved for any step.
    """
    delta = np.asarray(delta, dtype=float).reshape(9)
    R = q.rotation @ so3_exp(delta[:3])
    return ConstrainedDualQuadric(so3_log(R), q.t + delta[3:6], q.s * np.exp(delta[6:9]))


@dataclass(frozen=True)
class VariableBlock:
    """One manifold-valued variable for numeric differentiation."""

    value: object
    retract: object
    dim: int
    step_scale: float = 1.0


def numeric_jacobian(residual_fn, variables: list, step: float) -> np.ndarray:
    """Central-difference Jacobian of a residual over manifold blocks.

    `variables` is a list of VariableBlock; the residual function takes
    the list of block values. Steps are taken in each block's tangent
    space via its retraction.
    """
    values = [b.value for b in variables]
    base = np.asarray(residual_fn(values), dtype=float)
    if not np.all(np.isfinite(base)):
        raise NonFiniteResidual("residual is not finite at the linearization point")
    total = sum(b.dim for b in variables)
    J = np.empty((base.shape[0], total))
    col = 0
    for idx, block in enumerate(variables):
        h = step * block.step_scale
        for k in range(block.dim):
            delta = np.zeros(block.dim)
            delta[k] = h
            values[idx] = block.retract(block.value, delta)
            plus = np.asarray(residual_fn(values), dtype=float)
            values[idx] = block.retract(block.value, -delta)
            minus = np.asarray(residual_fn(values), dtype=float)
            values[idx] = block.value
            J[:, col] = (plus - minus) / (2.0 * h)
            col += 1
    return J


def _tolerant_jacobian(residual_fn, variables, step, base):
    """Like numeric_jacobian but falls back when a perturbed evaluation
    fails (FactorSkipped); missing sides degrade to one-sided or zero."""
    values = [b.value for b in variables]
    total = sum(b.dim for b in variables)
    J = np.zeros((base.shape[0], total))
    col = 0
    for idx, block in enumerate(variables):
        h = step * block.step_scale
        for k in range(block.dim):
            delta = np.zeros(block.dim)
            delta[k] = h
            plus = minus = None
            try:
                values[idx] = block.retract(block.value, delta)
                plus = np.asarray(residual_fn(values), dtype=float)
            except FactorSkipped:
                pass
            try:
                values[idx] = block.retract(block.value, -delta)
                minus = np.asarray(residual_fn(values), dtype=float)
            except FactorSkipped:
                pass
            values[idx] = block.value
            if plus is not None and minus is not None:
                J[:, col] = (plus - minus) / (2.0 * h)
            elif plus is not None:
                J[:, col] = (plus - base) / h
            elif minus is not None:
                J[:, col] = (base - minus) / h
            col += 1
    return J


# ----------------------------------------------------------------------
# Levenberg-Marquardt
# ----------------------------------------------------------------------


def _pose_block(pose: SE3Pose) -> VariableBlock:
    return VariableBlock(pose, pose_retract, 6, 1.0 + float(np.linalg.norm(pose.translation)))


def _quadric_block(q: ConstrainedDualQuadric) -> VariableBlock:
    return VariableBlock(q, retract_quadric, 9, 1.0)


class _Problem:
    """Variable layout and residual/Jacobian assembly for one graph."""

    def __init__(self, graph: FactorGraph, config: SolverConfig, tol: Tolerances):
        self.graph = graph
        self.config = config
        self.tol = tol
        self.n_poses = len(graph.poses)
        self.n_quadrics = len(graph.quadrics)
        # first pose is gauge-fixed: no columns
        self.pose_cols = 6 * (self.n_poses - 1)
        self.n_cols = self.pose_cols + 9 * self.n_quadrics
        rows = 0
        self.row_of_factor = []
        for _ in graph.odometry_factors:
            self.row_of_factor.append(rows)
            rows += 6
        self.bbox_row_start = rows
        for _ in graph.bbox_factors:
            self.row_of_factor.append(rows)
            rows += 4
        self.n_rows = rows
        self._odo_whiteners = [
            np.linalg.inv(np.linalg.cholesky(f.sigma)) for f in graph.odometry_factors
        ]
        self._bbox_whiteners = [
            np.linalg.inv(np.linalg.cholesky(f.lam)) for f in graph.bbox_factors
        ]

    def pose_col(self, i: int) -> int:
        return 6 * (i - 1)

    def quadric_col(self, j: int) -> int:
        return self.pose_cols + 9 * j

    def _bbox_core(self, factor, pose, quadric):
        if self.graph.error_mode == "algebraic":
            P = projection_matrix(pose, self.graph.intrinsics)
            Q = quadric_from_params(quadric)
            Q = Q / np.linalg.norm(Q)
            vals = []
            for line in bbox_to_lines(factor.b):
                pi = back_project_line(P, line).pi
                pi = pi / np.linalg.norm(pi)
                vals.append(pi @ Q @ pi)
            return np.array(vals)
        try:
            predicted = predict_bbox(pose, self.graph.intrinsics, quadric, self.tol)
        except (BehindCamera, NotAnEllipse, NotVisible) as exc:
            raise FactorSkipped(type(exc).__name__) from exc
        return factor.b.vector - predicted.vector

    def residuals(self, poses, quadrics, iteration=None, skip_events=None):
        """Stacked whitened residual; skipped factors contribute zeros."""
        r = np.zeros(self.n_rows)
        for k, f in enumerate(self.graph.odometry_factors):
            row = self.row_of_factor[k]
            err = pose_between(pose_compose(poses[f.i], f.u), poses[f.i + 1])
            r[row : row + 6] = self._odo_whiteners[k] @ pose_log(err)
        n_odo = len(self.graph.odometry_factors)
        for k, f in enumerate(self.graph.bbox_factors):
            row = self.row_of_factor[n_odo + k]
            try:
                raw = self._bbox_core(f, poses[f.i], quadrics[f.j])
            except FactorSkipped as exc:
                if skip_events is not None:
                    skip_events.append(SkipEvent(iteration, f.i, f.j, exc.reason))
                continue
            r[row : row + 4] = self._bbox_whiteners[k] @ raw
        return r

    def linearize(self, poses, quadrics, iteration, skip_events):
        """Residual plus dense Jacobian with factor-block structure."""
        r = np.zeros(self.n_rows)
        J = np.zeros((self.n_rows, self.n_cols))
        step = self.config.jacobian_step
        for k, f in enumerate(self.graph.odometry_factors):
            row = self.row_of_factor[k]
            W = self._odo_whiteners[k]

            def odo_fn(values, f=f, W=W):
                err = pose_between(pose_compose(values[0], f.u), values[1])
                return W @ pose_log(err)

            blocks = [_pose_block(poses[f.i]), _pose_block(poses[f.i + 1])]
            r[row : row + 6] = odo_fn([b.value for b in blocks])
            Jf = numeric_jacobian(odo_fn, blocks, step)
            if f.i > 0:
                J[row : row + 6, self.pose_col(f.i) : self.pose_col(f.i) + 6] = Jf[:, :6]
            J[row : row + 6, self.pose_col(f.i + 1) : self.pose_col(f.i + 1) + 6] = Jf[:, 6:]

        n_odo = len(self.graph.odometry_factors)
        for k, f in enumerate(self.graph.bbox_factors):
            row = self.row_of_factor[n_odo + k]
            W = self._bbox_whiteners[k]

            def bbox_fn(values, f=f, W=W):
                return W @ self._bbox_core(f, values[0], values[1])

            blocks = [_pose_block(poses[f.i]), _quadric_block(quadrics[f.j])]
            try:
                base = bbox_fn([b.value for b in blocks])
            except FactorSkipped as exc:
                skip_events.append(SkipEvent(iteration, f.i, f.j, exc.reason))
                continue
            r[row : row + 4] = base
            Jf = _tolerant_jacobian(bbox_fn, blocks, step, base)
            if f.i > 0:
                J[row : row + 4, self.pose_col(f.i) : self.pose_col(f.i) + 6] = Jf[:, :6]
            J[row : row + 4, self.quadric_col(f.j) : self.quadric_col(f.j) + 9] = Jf[:, 6:]
        return r, J

    def apply_step(self, poses, quadrics, delta):
        new_poses = [poses[0]]
        for i in range(1, self.n_poses):
            c = self.pose_col(i)
            new_poses.append(pose_retract(poses[i], delta[c : c + 6]))
        new_quadrics = []
        for j in range(self.n_quadrics):
            c = self.quadric_col(j)
            new_quadrics.append(retract_quadric(quadrics[j], delta[c : c + 9]))
        return new_poses, new_quadrics


def evaluate_cost(graph: FactorGraph, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Total squared whitened residual of the graph at its current values."""
    problem = _Problem(graph, SolverConfig(), tol)
    r = problem.residuals(graph.poses, graph.quadrics)
    return float(r @ r)


def optimize(
    graph: FactorGraph,
    config: SolverConfig = SolverConfig(),
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> OptimizeResult:
    """Levenberg-Marquardt MAP solve of the factor graph.

    The cost trace records the initial cost followed by the cost after
    each accepted step; it is non-increasing by construction. Raises
    DivergedDamping when the damping exceeds its ceiling before any step
    of an iteration is accepted.
    """
    problem = _Problem(graph, config, tol)
    poses = list(graph.poses)
    quadrics = list(graph.quadrics)
    skip_events: list = []

    r = problem.residuals(poses, quadrics, 0, skip_events)
    cost = float(r @ r)
    trace = [cost]
    damping = config.initial_damping
    converged = False
    iterations = 0

    if problem.n_cols == 0:
        return OptimizeResult(poses, quadrics, trace, skip_events, 0, True)

    for iteration in range(1, config.max_iterations + 1):
        iterations = iteration
        if cost <= 1e-300:
            converged = True
            break
        # the current iterate's skips were already logged by the residual
        # pass that produced it, so linearization uses a scratch list
        r, J = problem.linearize(poses, quadrics, iteration, [])
        H = J.T @ J
        g = J.T @ r
        diag = np.diag(H).copy()
        floor = 1e-12 * max(diag.max(), 1.0)
        diag = np.maximum(diag, floor)

        accepted = False
        while not accepted:
            try:
                delta = np.linalg.solve(H + damping * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.linalg.norm(delta) < 1e-14:
                converged = True
                break
            if delta is not None:
                cand_poses, cand_quadrics = problem.apply_step(poses, quadrics, delta)
                cand_events: list = []
                r_cand = problem.residuals(cand_poses, cand_quadrics, iteration, cand_events)
                cand_cost = float(r_cand @ r_cand)
                if np.isfinite(cand_cost) and cand_cost <= cost:
                    poses, quadrics = cand_poses, cand_quadrics
                    skip_events.extend(cand_events)
                    decrease = cost - cand_cost
                    cost = cand_cost
                    trace.append(cost)
                    damping = max(damping / config.damping_down_factor, 1e-32)
                    accepted = True
                    if decrease <= config.relative_cost_tolerance * max(cost, 1e-300):
                        converged = True
                    break
            damping *= config.damping_up_factor
            if damping > DAMPING_CEILING:
                raise DivergedDamping(
                    f"damping exceeded {DAMPING_CEILING:g} without an accepted step"
                )
        if converged:
            break

    return OptimizeResult(poses, quadrics, trace, skip_events, iterations, converged)
