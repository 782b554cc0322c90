"""Exception hierarchy shared by all modules."""


class PssmpError(Exception):
    pass


class DomainError(PssmpError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(PssmpError, ValueError):
    """A serialized triplet or experiment config failed validation."""


class PreconditionError(PssmpError, ValueError):
    """A theorem hypothesis required by an operation does not hold."""


class ContractError(PssmpError, ValueError):
    """Arguments are individually valid but inconsistent with each other."""


class DriverError(PssmpError, ValueError):
    """Explicit drivers do not fit the requested grid or triplet."""


class NumericalError(PssmpError, RuntimeError):
    """An iterative numerical method failed; carries diagnostics."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class EscalationLimitError(PssmpError, RuntimeError):
    """The state cap was doubled too many times."""


class SolverError(PssmpError, RuntimeError):
    """A simulation exceeded its step budget."""
