"""Exception types shared across the package."""


class KGFormatError(ValueError):
    """Malformed or duplicate line in a triple / metadata file."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)


class DomainError(ValueError):
    """Argument outside the domain of an operation (bad id, isolated node, ...)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class ContractViolation(RuntimeError):
    """A precondition that upstream code was supposed to guarantee does not hold."""


class NumericalError(FloatingPointError):
    """Non-finite value in a loss or parameter update."""

    def __init__(self, message, row=None, iteration=None):
        self.row = row
        self.iteration = iteration
        super().__init__(message)
