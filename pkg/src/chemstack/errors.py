"""Exception hierarchy shared across the package."""


class ChemstackError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ChemstackError, ValueError):
    """Invalid static configuration (network, module, scenario)."""


class InternalError(ChemstackError, RuntimeError):
    """Broken internal invariant. Always a bug, never user input."""


class IntegrationDiverged(ChemstackError, ArithmeticError):
    """ODE integration produced non-finite values."""


class NumericalFailure(ChemstackError, ArithmeticError):
    """Iterative solver did not converge."""


class StabilityViolation(ChemstackError, ArithmeticError):
    """Linearization at an operating point has a non-decaying mode."""


class ScenarioError(ConfigurationError):
    """Scenario file failed to parse or validate.

    ``line`` and ``field`` locate the offending entry when known.
    """

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class EmptyMeasurement(ChemstackError, ValueError):
    """A fitness function was given a trial with no post-settle measurements."""
