"""Exception types shared across the package.

The CLI maps these onto process exit codes; library callers catch them
directly.
"""


class CovsteerError(Exception):
    """Base class for all package errors."""


class ScenarioError(CovsteerError):
    """Malformed scenario or report file (bad field, unknown key, bad shape).

    Carries ``path``, a dotted location of the offending field when known.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InfeasibleError(CovsteerError):
    """The planning program admits no feasible binary assignment."""

    def __init__(self, message: str, diagnostic: dict | None = None):
        self.diagnostic = diagnostic or {}
        super().__init__(message)


class NumericalError(CovsteerError):
    """A solver or estimator failed to converge to its contract."""


class ValidationFailure(CovsteerError):
    """A validation predicate evaluated to fail (used by the CLI)."""
