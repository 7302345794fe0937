"""Exception hierarchy shared by all modules."""


class SdeError(Exception):
    pass


class ConfigurationError(SdeError, ValueError):
    """Bad problem definition or unknown built-in name."""


class ArgumentError(SdeError, ValueError):
    """Arguments to an operation are inconsistent (shapes, divisibility...)."""


class PreconditionError(SdeError, ValueError):
    """A documented precondition of a scheme does not hold."""


class NumericError(SdeError, ArithmeticError):
    """Non-finite values where finite ones were required."""

    def __init__(self, message, offending_input=None):
        super().__init__(message)
        self.offending_input = offending_input


class SolverError(SdeError, RuntimeError):
    """The nonlinear solver of the implicit scheme did not converge."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvariantViolation(SdeError, AssertionError):
    """A runtime invariant (drift bound, domination) was violated."""
