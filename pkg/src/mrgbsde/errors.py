"""Exception hierarchy shared by the solver modules and the CLI."""


class MrgbsdeError(Exception):
    """Base class for all errors raised by this package."""


class CflViolation(MrgbsdeError):
    """Space step too small for the largest volatility of the band."""


class NoContraction(MrgbsdeError):
    """The implicit node update is not a contraction (L * dt >= 1)."""


class DimensionMismatch(MrgbsdeError):
    pass


class InvalidConfig(MrgbsdeError):
    pass


class InvalidSpec(MrgbsdeError):
    pass


class TerminalConstraintViolated(MrgbsdeError):
    """The terminal value does not satisfy sum_l theta^l E[-xi^l] <= 0."""

    def __init__(self, residual, tol):
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"terminal constraint violated: residual {residual:.6g} > tol {tol:.3g}"
        )


class MaxIterExceeded(MrgbsdeError):
    """Picard iteration did not reach the requested tolerance."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class WindowMisaligned(MrgbsdeError):
    pass


class SchemaError(MrgbsdeError):
    """A scenario document does not match the expected layout."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class ParseError(MrgbsdeError):
    """An expression could not be parsed or evaluated."""

    def __init__(self, expression, location, message):
        self.expression = expression
        self.location = location
        self.message = message
        super().__init__(f"{message} at column {location} in {expression!r}")


class AssumptionViolated(MrgbsdeError):
    """One of H_theta, H_xi or the CFL condition fails for a scenario."""

    def __init__(self, assumption, message, value=None):
        self.assumption = assumption
        self.value = value
        super().__init__(f"{assumption}: {message}")


class InputError(MrgbsdeError):
    pass
