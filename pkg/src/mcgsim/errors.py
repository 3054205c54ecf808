"""Exception types shared across the package."""

from __future__ import annotations


class McgError(Exception):
    """Base class for every package-specific error."""


class SchemaError(McgError):
    """A scenario file is structurally malformed (bad JSON or schema violation).

    ``problems`` is a list of human-readable "path: message" strings, one per
    violation.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ValidationError(McgError):
    """A structurally valid input fails semantic checks.

    Collects every failed check so a user sees all problems at once.
    """

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class MissingCouplingValue(McgError):
    """A cost function references an opponent decision that was not supplied."""


class DomainViolation(McgError):
    """A cost evaluation left its admissible domain (e.g. log argument <= 1)."""


class TooFewVertices(McgError):
    """A graph operation needs at least two vertices."""


class SingularOperator(McgError):
    """The estimator consensus operator is not positive definite."""


class NotHurwitz(McgError):
    """A companion matrix has an eigenvalue with non-negative real part."""


class NonPositiveBound(McgError):
    """A gain-bound formula received a non-positive constant it requires positive."""


class SingularJacobian(McgError):
    """Newton's method hit a numerically singular Jacobian."""


class NoConvergence(McgError):
    """An iterative solver exhausted its budget without meeting tolerance."""

    def __init__(self, message: str, best=None, residual: float | None = None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class NonFiniteState(McgError):
    """Integration produced NaN or Inf; ``t`` is the first detection time."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class DegenerateWindow(McgError):
    """A fit window contains too few samples to regress on."""
