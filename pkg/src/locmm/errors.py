"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: shapes, ranges, malformed descriptors."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class SamplerError(RuntimeError):
    """Rejection sampling failed, usually because the target set is too thin."""


class EntropyBudgetError(RuntimeError):
    """A packing request would exceed the configured point budget."""
