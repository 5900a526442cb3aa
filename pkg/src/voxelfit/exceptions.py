"""Exception hierarchy shared by every module of the toolkit."""


class VoxelFitError(Exception):
    """Base class for all errors raised by voxelfit."""


class SchemaError(VoxelFitError):
    """A table or model does not have the expected columns."""


class RowValidationError(VoxelFitError):
    """A single input row violates a cell invariant."""

    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class EmptyStratumError(VoxelFitError):
    """A stratum selection produced no cells."""


class LinkDomainError(VoxelFitError, ValueError):
    """A mean value lies outside the open domain of a link function."""


class SingularDesignError(VoxelFitError):
    """The weighted least-squares system of an IRLS step cannot be solved."""


class ConfigurationError(VoxelFitError, ValueError):
    """Invalid combination of method, subsampling and solver settings."""


class DegenerateSubsampleError(VoxelFitError):
    """A subsample has no rows, or lacks one of the response classes."""


class FitFailedError(VoxelFitError):
    """Every bag of a fit was degenerate or failed to converge."""

    def __init__(self, message: str, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class UndefinedMetricError(VoxelFitError, ValueError):
    """A prediction metric is undefined for the supplied labels or totals."""
