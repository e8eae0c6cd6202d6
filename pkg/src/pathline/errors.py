"""Exception hierarchy for the pathline package."""

from __future__ import annotations


class PathlineError(Exception):
    """Base class for all package-specific errors."""


class DegenerateGradient(PathlineError):
    """Level-set gradient vanished where a normal direction was required."""


class ChartOutOfRange(PathlineError):
    """Point lies outside the tubular neighborhood covered by the chart."""


class NoConvergence(PathlineError):
    """Iterative projection failed to converge within the iteration budget."""


class QuadratureBallEscapesTube(PathlineError):
    """Averaging ball around a tube point is not contained in the tube."""


class NotImplementedDimension(PathlineError):
    """Ambient dimension is not supported by this operation."""


class DegenerateFrame(PathlineError):
    """Projected seed vectors are too close to linear dependence."""


class TransversalityViolation(PathlineError):
    """Relative normal speeds on the two sides of the interface have
    strictly opposite signs (attracting configuration)."""

    def __init__(self, message, t=None, x=None, u_plus=None, u_minus=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.u_plus = u_plus
        self.u_minus = u_minus


class MaxStepsExceeded(PathlineError):
    """Integrator exceeded its configured step budget."""


class LeftDomain(PathlineError):
    """Trajectory left the spatial domain box."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class SingularJacobian(PathlineError):
    """A Jacobian matrix required to be invertible is (numerically) singular."""


class SceneSyntaxError(PathlineError):
    """Scene text failed to tokenize or parse.

    Carries a 1-based (line, column) location and a short description of
    what was expected.
    """

    def __init__(self, message, line, column):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class SceneSemanticError(PathlineError):
    """Scene parsed but violates a structural rule (unknown variable,
    dimension mismatch, missing key, ...)."""

    def __init__(self, message, line=None, column=None):
        loc = f"{line}:{column}: " if line is not None else ""
        super().__init__(f"{loc}{message}")
        self.line = line
        self.column = column


class EvalError(PathlineError):
    """A compiled scene expression produced a non-finite value."""

    def __init__(self, message, line=None, column=None):
        loc = f"{line}:{column}: " if line is not None else ""
        super().__init__(f"{loc}{message}")
        self.line = line
        self.column = column
