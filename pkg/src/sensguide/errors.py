"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: InputError (and subclasses) -> 2,
DivergenceError -> 3. Budget exhaustion is reported through result objects,
not exceptions.
"""


class SensGuideError(Exception):
    """Base class for all toolkit errors."""


class InputError(SensGuideError):
    """Malformed or inconsistent input (files, dimensions, preconditions)."""


class ModelFormatError(InputError):
    """Model file failed to parse or validate; carries the offending field path."""

    def __init__(self, message: str, field_path: str = ""):
        self.field_path = field_path
        if field_path:
            message = f"{message} (at {field_path!r})"
        super().__init__(message)


class DivergenceError(SensGuideError):
    """Numerical blow-up during integration; carries the last finite sample index."""

    def __init__(self, message: str, last_finite_index: int):
        self.last_finite_index = last_finite_index
        super().__init__(f"{message} (last finite sample index: {last_finite_index})")


class GenerationError(SensGuideError):
    """Dataset generation produced no usable tuples."""


class TrainingDivergedError(SensGuideError):
    """Training loss became non-finite; carries the last stable epoch."""

    def __init__(self, message: str, last_stable_epoch: int):
        self.last_stable_epoch = last_stable_epoch
        super().__init__(f"{message} (last stable epoch: {last_stable_epoch})")


class DegeneratePredictionError(SensGuideError):
    """Approximator produced a direction with vanishing norm."""


class NoTerminationGuaranteeError(SensGuideError):
    """Requested threshold is below the guaranteed convergence floor."""
