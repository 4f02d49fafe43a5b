"""Exception hierarchy shared across the package.

Everything raised on purpose derives from GraphWarpError so callers (and the
CLI) can tell expected failures apart from bugs.
"""


class GraphWarpError(Exception):
    """Base class for all errors raised by graphwarp."""


class DegenerateConfiguration(GraphWarpError):
    """Point set too degenerate (collinear/coincident) for a rigid fit."""


class BehindCamera(GraphWarpError):
    """Point has non-positive depth and cannot be projected."""


class NonpositiveDepth(GraphWarpError):
    """Backprojection requested with depth <= 0."""


class EmptyInput(GraphWarpError):
    """Operation received an empty point/feature set."""


class InsufficientNodes(GraphWarpError):
    """A pyramid level would contain no nodes."""


class SizeMismatch(GraphWarpError):
    """Feature count does not match the node count of the level."""


class CountMismatch(GraphWarpError):
    """Two per-node sequences have different lengths."""


class EmptyGraph(GraphWarpError):
    """Skinning requested against a graph without nodes."""


class GraphMismatch(GraphWarpError):
    """Two warp fields do not share the same node graph."""


class NonpositiveSigma(GraphWarpError):
    """A Gaussian motion has sigma <= 0 where positive sigma is required."""


class NegativeSigma(GraphWarpError):
    """A prediction file contains a negative sigma."""


class ParseError(GraphWarpError):
    """A file failed to parse; message names the file and line if known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}: "
            if line is not None:
                prefix = f"{path}:{line}: "
        super().__init__(prefix + message)


class SolverDiverged(GraphWarpError):
    """No damping level produced an energy decrease within the retry budget."""


class NumericalFailure(GraphWarpError):
    """Energy or state became non-finite."""


class UnreachableNodes(GraphWarpError):
    """Occluded nodes with no graph path to any visible node."""


class EmptySelection(GraphWarpError):
    """Metric requested over an empty node subset."""


class DimensionMismatch(GraphWarpError):
    """Raster dimensions disagree with the camera."""


class NoValidVertices(GraphWarpError):
    """No warped vertex landed on valid depth."""


class DegenerateExtent(GraphWarpError):
    """Animation bounding box has zero extent and cannot be resized."""


class BadSpec(GraphWarpError):
    """Animation spec is malformed."""


class NothingVisible(GraphWarpError):
    """No point of the scene is in front of the camera."""
