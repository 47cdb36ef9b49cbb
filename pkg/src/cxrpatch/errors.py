"""Exception taxonomy shared across the pipeline.

Every failure mode callers are expected to handle gets its own class so that
batch tools and the HTTP service can map them to exit codes / status codes
without string matching.
"""

from __future__ import annotations


class CxrPatchError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CxrPatchError):
    """An argument violates an operation's precondition."""


class InvalidConfigError(CxrPatchError):
    """A configuration value is outside its declared range."""


# --- image file I/O -------------------------------------------------------

class PgmParseError(CxrPatchError):
    """Base for binary-PGM parsing failures."""


class MalformedHeaderError(PgmParseError):
    """File does not start with a valid P5 header."""


class UnsupportedMaxvalError(PgmParseError):
    """PGM maxval is not 255 (only 8-bit rasters are supported)."""


class TruncatedDataError(PgmParseError):
    """Header promises more pixel bytes than the file contains."""


# --- segmentation / geometry ---------------------------------------------

class SegmentationFailedError(CxrPatchError):
    """Fewer than two qualifying lung components were found."""

    def __init__(self, message: str, component_count: int = 0):
        super().__init__(message)
        self.component_count = component_count


class InsufficientComponentsError(CxrPatchError):
    """Mask does not contain two connected components."""

    def __init__(self, message: str, component_count: int):
        super().__init__(message)
        self.component_count = component_count


class InvalidBoxError(CxrPatchError):
    """Bounding box too small (or degenerate) for the requested grid."""


class MaskMismatchError(CxrPatchError):
    """Mask dimensions do not match the case image."""


class ShapeError(CxrPatchError):
    """Array/tensor dimensions are incompatible with the operation."""


# --- labels ----------------------------------------------------------------

class UncoveredNoduleError(CxrPatchError):
    """One or more nodules intersect no patch (segmentation missed them)."""

    def __init__(self, message: str, nodule_ids: list[str]):
        super().__init__(message)
        self.nodule_ids = list(nodule_ids)


class GridMismatchError(CxrPatchError):
    """Annotation was made against a different grid spec."""


class InvalidAnnotationError(CxrPatchError):
    """Annotation carries patch indices outside the grid."""


# --- training / metrics ----------------------------------------------------

class DegenerateDataError(CxrPatchError):
    """Training data contains a single class."""


class UndefinedMetricError(CxrPatchError):
    """Metric is undefined for this input (e.g. single-class AUROC)."""


class ServiceNotReadyError(CxrPatchError):
    """Service operation requires a model checkpoint that is not loaded."""


class CheckpointError(CxrPatchError):
    """Checkpoint file is missing fields or has an unsupported version."""
