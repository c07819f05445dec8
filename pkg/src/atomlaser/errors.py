"""Exception types shared across the package.

Two families: bad input (ValueError) and runtime breakdown (RuntimeError).
The CLI maps the first family to exit code 1 and the second to exit code 2.
"""


class ParameterError(ValueError):
    """A physical parameter is out of its allowed range."""


class DomainError(ValueError):
    """A function was evaluated outside its mathematical domain."""


class GridError(ValueError):
    """A time grid is malformed or two grids that must match do not."""


class ConfigError(ValueError):
    """A scenario configuration is unusable (missing key, bad value, grid
    too coarse for the requested solver)."""


class NumericalFailure(RuntimeError):
    """A solver or quadrature failed to reach its accuracy target."""


class GeneratorError(RuntimeError):
    """The master-equation generator failed an assembly self-check."""
