"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: config/usage problems
exit 2, numeric failures exit 3, verification failures exit 4.
"""


class DnlError(Exception):
    """Base class for all package errors."""


class ConfigError(DnlError):
    """Invalid configuration value or incompatible settings."""


class UsageError(DnlError):
    """API or CLI misuse (bad argument combination, backward on non-scalar)."""


class DimensionError(DnlError):
    """Tensor shape mismatch or impossible output geometry."""


class DataError(DnlError):
    """Bad sample content, e.g. label outside [0, num_classes) and not 255."""


class FormatError(DnlError):
    """Corrupt or incompatible on-disk file (bad magic, version, truncation)."""


class NumericError(DnlError):
    """NaN/Inf encountered where finite values are required."""


class VerificationError(DnlError):
    """A correctness check (gradient comparison) did not pass."""
