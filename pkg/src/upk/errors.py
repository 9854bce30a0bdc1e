"""Exception types shared across the toolkit.

Everything user-facing derives from UpkError so the CLI can map
"your input is wrong" to exit code 2 and leave genuine bugs to
crash with exit code 1.
"""

from __future__ import annotations


class UpkError(Exception):
    """Base class for all toolkit errors."""


# -- sequence_io ---------------------------------------------------------

class ParseError(UpkError):
    """Document is not valid JSON / not decodable at all."""


class SchemaError(UpkError):
    """Document parsed but a required field is missing or has the wrong shape."""

    def __init__(self, field: str, message: str | None = None):
        self.field = field
        super().__init__(message or f"manifest field {field!r}: missing or invalid")


class ConsistencyError(UpkError):
    """Manifest is well-formed but internally inconsistent (index gaps, duplicate files)."""


class DimensionMismatch(UpkError):
    """Raster dimensions differ from what the sequence declares."""


class DecodeError(UpkError):
    """Image file exists but cannot be decoded as the expected format."""


class ScaleError(UpkError):
    """Depth scale is non-positive."""


class FrameAccessError(UpkError):
    """I/O error while loading a specific frame's artifacts."""

    def __init__(self, frame: int, cause: Exception):
        self.frame = frame
        self.cause = cause
        super().__init__(f"frame {frame}: {cause}")


# -- seg_metrics ---------------------------------------------------------

class FrameSetMismatch(UpkError):
    """Two per-frame collections do not cover the same frame indices."""


class EmptyInput(UpkError):
    """Aggregation over an empty score list."""


class MixedLabels(UpkError):
    """Aggregation over scores carrying more than one label."""


class BadThreshold(UpkError):
    """Failure-mining threshold outside its valid range."""


# -- frame_filter --------------------------------------------------------

class UnknownLabel(UpkError):
    """Filter rule references a label outside the vocabulary."""

    def __init__(self, label: str):
        self.label = label
        super().__init__(f"unknown label in rule: {label!r}")


# -- geometry3d ----------------------------------------------------------

class NonPositiveDepth(UpkError):
    """Backprojection/projection requires depth strictly > 0."""


class TooFewPoints(UpkError):
    """Operation needs more points than the cloud provides."""


class DegenerateGeometry(UpkError):
    """Point configuration does not pin down a unique rotation."""


class NotARotation(UpkError):
    """Matrix fails the orthonormality / det=+1 checks."""


# -- pose_tracker --------------------------------------------------------

class InitializationError(UpkError):
    """Frame 0 does not yield enough points; tracking requires the object
    to be segmented in the first frame."""


class NoComparableFrames(UpkError):
    """Trajectory comparison found no frame tracked in both inputs."""


# -- synth_bench ---------------------------------------------------------

class BadSpec(UpkError):
    """Shape/corruption specification violates its invariants."""


class OutOfRange(UpkError):
    """Frame index outside the scripted range."""


class ObjectOutOfView(UpkError):
    """A rendered frame has no in-image points and no occlusion window excusing it."""
