"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters, scenario definitions or run configuration."""


class DomainError(ValueError):
    """A state lies outside the domain of a model function (e.g. negative stock)."""


class SolverFailure(RuntimeError):
    """Integration could not proceed (step underflow, non-finite state, step budget)."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class NoBracketError(ValueError):
    """Both ends of a bisection interval flow to the same attractor."""


class UnresolvedBasinsError(RuntimeError):
    """Too many basin cells failed to converge or match a known attractor."""

    def __init__(self, message, grid=None):
        super().__init__(message)
        self.grid = grid
