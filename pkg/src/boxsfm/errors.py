"""Exception types shared across the package."""


class BoxSfmError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInput(BoxSfmError):
    """Input does not constrain the requested estimate (e.g. no horizontal spread)."""


class NonGravityPose(BoxSfmError):
    """A transform expected to preserve the vertical axis tilts it."""


class BehindCamera(BoxSfmError):
    """Point has non-positive depth in the camera frame."""


class EmbeddingDimMismatch(BoxSfmError):
    """Detection embeddings of the two frames have different dimensions."""


class DuplicateEdge(BoxSfmError):
    """The same unordered frame pair was inserted twice into a view graph."""


class EmptyGraph(BoxSfmError):
    """Averaging was requested on a graph without nodes."""


class UnderconstrainedComponent(BoxSfmError):
    """A graph component cannot be solved (missing yaw/center anchor data)."""


class PlacementFailure(BoxSfmError):
    """Scene generation could not place disjoint objects within the retry budget."""


class TrajectoryFailure(BoxSfmError):
    """Trajectory sampling could not satisfy the visibility constraint."""


class ParseError(BoxSfmError):
    """A dataset file could not be parsed.

    Attributes:
        line: 1-based line number of the offending record.
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaVersionMismatch(BoxSfmError):
    """A file declares a schema version this code does not understand."""


class NothingRegistered(BoxSfmError):
    """The view graph has no verified edges; no frame can be registered."""
