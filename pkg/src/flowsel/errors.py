"""Exception types shared across the package.

The CLI maps these onto exit codes, so raising the right family matters:
bad or missing input data is a DataError, a computation that cannot
produce a meaningful number is a NumericError.
"""


class DataError(ValueError):
    """Input data is missing, malformed, or inconsistent with the request."""


class NumericError(ArithmeticError):
    """A numeric procedure failed: divergence, undefined score, empty aggregate."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name and completed artifacts."""

    def __init__(self, stage: str, message: str, completed: dict | None = None):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.completed = dict(completed or {})
