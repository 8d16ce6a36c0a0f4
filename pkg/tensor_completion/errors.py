from __future__ import annotations


class TensorCompletionError(ValueError):
    """Base class for every error raised by the package."""


class ModeError(TensorCompletionError):
    pass


class DimensionMismatchError(TensorCompletionError):
    pass


class ObservationError(TensorCompletionError):
    pass


class DiagramError(TensorCompletionError):
    def __init__(self, message: str, *, violations: list[str] | None = None) -> None:
        super().__init__(message)
        self.violations = violations or []


class RankError(TensorCompletionError):
    pass


class SolverError(TensorCompletionError):
    pass


class ImageFormatError(TensorCompletionError):
    pass


class OrthonormalityError(TensorCompletionError):
    pass


class OutputPathError(TensorCompletionError):
    pass
