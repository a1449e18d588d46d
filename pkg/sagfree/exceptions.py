"""
Errors raised by :mod:`sagfree`.

Every error derives from :class:`SagfreeError`. Errors caused by invalid
input also derive from :class:`ValueError` and file errors from
:class:`OSError`, so callers can catch either the package base or the
builtin they already expect. The command line maps each error to an exit
code through :attr:`SagfreeError.exit_code`.
"""


class SagfreeError(Exception):
    """Base class of all package errors."""

    exit_code = 5


class OutOfBandError(SagfreeError, ValueError):
    """An entry falls outside the stored band of a banded matrix."""

    def __init__(self, row, col, hbw):
        self.row = row
        self.col = col
        super().__init__(
            f"Entry ({row}, {col}) lies outside the half-bandwidth {hbw}."
        )


class BadDimensionError(SagfreeError, ValueError):
    """A size or count argument is not admissible."""


class DimensionMismatchError(SagfreeError, ValueError):
    """Two operands have incompatible lengths."""

    def __init__(self, expected, got, what="vector"):
        self.expected = expected
        self.got = got
        article = "an" if what[:1] in "aeiou" else "a"
        super().__init__(
            f"Expected {article} {what} of length {expected}, "
            f"got length {got}."
        )


class DegenerateEdgeError(SagfreeError, ValueError):
    """An edge is (numerically) of zero length."""

    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"Edge {edge} is degenerate (zero length).")


class AntiparallelTangentsError(SagfreeError, ValueError):
    """The two edges meeting at a vertex fold back onto each other."""

    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(
            f"The tangents at vertex {vertex} are antiparallel; the "
            "curvature is undefined."
        )


class NotSpdError(SagfreeError, ArithmeticError):
    """A matrix expected to be SPD showed non-positive curvature."""


class SolverFailure(SagfreeError, ArithmeticError):
    """A linear solve did not reach the required accuracy."""


class ParseError(SagfreeError, ValueError):
    """A file could not be parsed."""

    exit_code = 3


class ConfigError(SagfreeError, ValueError):
    """A run configuration is invalid."""

    exit_code = 3


class IoError(SagfreeError, OSError):
    """A file could not be read or written."""

    exit_code = 4
