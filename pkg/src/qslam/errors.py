"""Exception types raised across the library.

Names match the failure modes of the operations that raise them; modules
only ever raise these (or ValueError for malformed arguments).
"""

from __future__ import annotations


class QslamError(Exception):
    """Base class for all library errors."""


# -- geometry ----------------------------------------------------------


class NotAnEllipse(QslamError):
    """The projected conic is a hyperbola, parabola or degenerate."""


class NotVisible(QslamError):
    """No part of the conic lies inside the image rectangle."""


class BehindCamera(QslamError):
    """The quadric centroid has non-positive depth in the camera frame."""


# -- initializer -------------------------------------------------------


class InsufficientObservations(QslamError):
    """Too few detections to constrain the 10-vector linear system."""


class NotEllipsoidal(QslamError):
    """The recovered quadric surface is not an ellipsoid."""


class ZeroScale(QslamError):
    """A semi-axis of the recovered quadric collapsed to zero."""


class BehindAllCameras(QslamError):
    """The initialized centroid lies behind every observing camera.

    Carries the extracted quadric so callers that opt in can keep it.
    """

    def __init__(self, quadric, message="landmark initialized behind every observing camera"):
        super().__init__(message)
        self.quadric = quadric


class RankDeficient(UserWarning):
    """The homogeneous solution is not unique (reported, not fatal)."""


# -- graph -------------------------------------------------------------


class FactorSkipped(QslamError):
    """A bounding-box factor could not be evaluated at this iterate."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class NonFiniteResidual(QslamError):
    """A residual evaluated to NaN or infinity at the linearization point."""


class DivergedDamping(QslamError):
    """Levenberg-Marquardt damping exceeded its ceiling with no accepted step."""


# -- simulator ---------------------------------------------------------


class PlacementFailure(QslamError):
    """Rejection sampling could not place all objects in the room."""


class CoverageFailure(QslamError):
    """No trajectory found from which every object is seen enough times."""


# -- evaluation --------------------------------------------------------


class LengthMismatch(QslamError):
    """Trajectories to compare have different lengths."""


class NoMatchedLandmarks(QslamError):
    """No estimated landmark shares an id with the ground truth."""


class EmptyDetections(QslamError):
    """Class-score fusion needs at least one detection."""


# -- cli / dataset -----------------------------------------------------


class ConfigError(QslamError):
    """Invalid or unparseable experiment configuration."""


class DatasetError(QslamError):
    """Missing or malformed dataset files."""
