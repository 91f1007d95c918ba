"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class ContractError(ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class DivergenceError(ArithmeticError):
    """An ODE integration produced a non-finite state.

    ``time`` is the first grid time at which the state stopped being finite.
    """

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"non-finite state at t={self.time:g}")


class InitializationError(RuntimeError):
    """Every smoothing scale diverged at the initial iterate."""


class ConfigError(ValueError):
    """An experiment configuration is malformed."""
