"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function being evaluated."""


class NumericalFailure(RuntimeError):
    """An iterative routine failed to reach its stated accuracy."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class GuardError(ValueError):
    """A desk-scale size guard (exhaustive enumeration) was violated."""


class SupportNotIdentifiable(ValueError):
    """The columns of A on a support are numerically rank deficient."""


class ThresholdUndefined(ValueError):
    """The unique-global threshold needs K >= 2 * ||x||_0."""


class CertificateUnavailable(ValueError):
    """A landscape certificate cannot be built from the given data."""
