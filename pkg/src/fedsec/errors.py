"""Exception hierarchy. Each category maps to a distinct CLI exit code."""


class FedsecError(Exception):
    exit_code = 1


class ShapeError(FedsecError):
    """Structural mismatch between parameters, specs, or inputs."""

    exit_code = 3


class ValidationError(FedsecError, ValueError):
    exit_code = 4


class NumericalError(FedsecError, ArithmeticError):
    exit_code = 5


class FormatError(FedsecError):
    """Malformed on-disk artifact (IDX file, checkpoint)."""

    exit_code = 6


class ConsistencyError(FedsecError):
    exit_code = 7


class ConfigError(FedsecError):
    """Bad experiment configuration. ``problems`` lists every violation found."""

    exit_code = 2

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class SchemaMismatchError(FedsecError):
    exit_code = 8
