"""Central numeric tolerances for the geometry and estimation stack.

All geometry runs in 64-bit floats. Every threshold used by the library
lives in this one record so callers can inspect or override them in a
single place.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # rotation matrices: max |R^T R - I| and |det R - 1|
    rotation_orthonormality: float = 1e-9
    # symmetric-matrix check, relative to the matrix norm
    matrix_symmetry_rel: float = 1e-9
    # ellipse classification: det(C_33) relative to ||C||_F^2
    ellipse_det_rel: float = 1e-12
    # |p^T C p| for a point reported to lie on a conic (normalized)
    point_on_conic: float = 1e-8
    # |l^T C* l| for a line reported tangent to a conic (normalized)
    tangency: float = 1e-6
    # slack when testing whether a candidate point is inside the image
    border_inclusion_px: float = 1e-7
    # negative quadratic discriminants within this relative band are
    # treated as tangential double roots
    quadratic_disc_rel: float = 1e-12
    # gap between the two smallest singular values below which the
    # homogeneous solution is flagged as non-unique
    rank_gap: float = 1e-9
    # eigenvalues below this (relative to the matrix norm) count as zero
    zero_eigenvalue_rel: float = 1e-12
    # deviation of quaternion norm from 1 allowed when reading files
    quaternion_norm: float = 1e-6
    # variance floor applied to factor covariances so whitening stays
    # well defined on zero-noise runs
    covariance_floor: float = 1e-12


DEFAULT_TOLERANCES = Tolerances()
