"""Shared exception types.

Exit-code mapping in the CLI: ConfigError -> 2, NumericalError -> 3.
"""


class ContractError(ValueError):
    """An operation was called with input violating its documented contract."""


class SingularityError(ContractError):
    """Input too close to a projection singularity (e.g. near-zero vector for the sphere)."""


class DegeneracyError(ContractError):
    """Spectrum too degenerate for a well-defined eigenvector projection."""


class NumericalError(RuntimeError):
    """A computation produced NaN/Inf or otherwise failed numerically."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""
