"""Exception types shared across the package."""


class NumericError(RuntimeError):
    """Raised when an iterative or numeric computation fails (non-convergence,
    NaN loss, non-finite evaluation).  The CLI maps this to exit code 3."""
