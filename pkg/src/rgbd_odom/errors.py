"""Exception hierarchy for the odometry engine.

All engine-level failures derive from OdometryError so callers can catch one
base class. Pipeline-level failures (TooFewMatches etc.) are reported as
status records, not exceptions; the exceptions here signal contract
violations at the operation level.
"""


class OdometryError(Exception):
    """Base class for all engine errors."""


class AngleNearPi(OdometryError):
    """Rotation angle too close to pi for a stable axis-angle logarithm."""


class InvalidDepth(OdometryError):
    """Depth value outside the sensor's valid range, non-positive, or NaN."""


class OutOfBounds(OdometryError):
    """Pixel coordinate outside the image."""


class BehindCamera(OdometryError):
    """Projection requested for a point with non-positive Z."""


class ParseError(OdometryError):
    """Malformed feature file; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class MixedKind(ParseError):
    """Feature file rows disagree on descriptor kind/length."""


class TooFewCandidates(OdometryError):
    """knn2 needs at least two candidate descriptors."""


class KindMismatch(OdometryError):
    """Binary descriptors matched against real ones (or lengths differ)."""


class DegenerateConfiguration(OdometryError):
    """Point configuration leaves the alignment rotation unconstrained."""


class InsufficientCorrespondences(OdometryError):
    """Fewer than three correspondences; no rigid alignment possible."""


class NoConsensus(OdometryError):
    """RANSAC found no model with the minimum inlier support."""


class TooFewInliers(OdometryError):
    """Threshold refinement needs at least two inlier residuals."""


class MissingSigmas(OdometryError):
    """Perturbation requested for a correspondence set without noise sigmas."""


class UnstableGeometry(OdometryError):
    """Too many perturbation trials hit a degenerate alignment."""


class TimestampMismatch(OdometryError):
    """Trajectory comparison could not associate enough timestamps."""


class DatasetError(OdometryError):
    """Unreadable or inconsistent dataset entry; carries the path."""


class ManifestError(DatasetError):
    """Malformed dataset manifest."""


class MissingFile(DatasetError):
    """Manifest references a file that does not exist."""


class BadRasterFormat(DatasetError):
    """Raster file is not an 8-bit intensity or 16-bit depth image."""
