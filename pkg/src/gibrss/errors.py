"""Exception types shared across the package.

ContractError (and subclasses) map to CLI exit code 1, I/O problems to
exit code 2. All contract violations are ValueErrors so the estimator
API behaves like any other sklearn-compatible component.
"""


class ContractError(ValueError):
    """A precondition or invariant of an operation was violated."""


class DimensionError(ContractError):
    """Shapes of the operands are incompatible; message names both shapes."""


class NumericError(ContractError):
    """A numeric value is unusable (NaN/inf) where a finite value is required."""


class FileFormatError(OSError):
    """A file exists but does not parse as the expected format."""
