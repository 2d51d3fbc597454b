"""Exception types shared across the pipeline; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration (exit 2)."""


class AssumptionViolation(RuntimeError):
    """A structural assumption (detectability, R != 0, positivity) fails (exit 3)."""


class NumericalFailure(RuntimeError):
    """Non-convergence, divergence or an unmet accuracy target (exit 4)."""
