"""Exception hierarchy; the CLI maps each family onto an exit code."""


class MsdcError(Exception):
    exit_code = 1


class ConfigError(MsdcError):
    """Bad configuration or command-line usage."""

    exit_code = 1


class DataError(MsdcError, ValueError):
    """Input data is malformed, misaligned or degenerate."""

    exit_code = 2


class AssumptionViolation(DataError):
    pass


class NumericalError(MsdcError, ArithmeticError):
    """Non-convergence, divergence or non-finite values during computation."""

    exit_code = 3
