"""Exception types shared across frechetkit."""


class FrechetKitError(Exception):
    """Base class for all library errors."""


class DomainError(FrechetKitError, ValueError):
    """An argument lies outside the domain of an operation.

    ``witness`` optionally carries the offending point or sample.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class UnsupportedConfigurationError(FrechetKitError):
    pass


class InconsistentBoundsError(FrechetKitError):
    """Declared sup/Lipschitz bounds are contradicted by a computed iterate."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class DslSyntaxError(FrechetKitError, ValueError):
    """Parse failure; ``offset`` is a byte offset into the UTF-8 source."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EvalError(FrechetKitError, ArithmeticError):
    """Expression evaluation failure; ``path`` locates the failing node."""

    def __init__(self, message, path=()):
        where = "/".join(path) if path else "<root>"
        super().__init__(f"{message} at node {where}")
        self.path = tuple(path)


class ConfigError(FrechetKitError):
    """Experiment configuration is malformed; ``pointer`` is a JSON path."""

    def __init__(self, message, pointer="$"):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer
