"""Exception types shared across the package."""


class MeanflockError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(MeanflockError):
    """An array argument has the wrong spatial dimension.

    Carries the name of the offending argument so callers can report it.
    """

    def __init__(self, argument: str, expected: int, got: int):
        self.argument = argument
        self.expected = expected
        self.got = got
        super().__init__(
            f"argument '{argument}' has dimension {got}, expected {expected}"
        )


class EmptyMeasureError(MeanflockError):
    """A mean-field integral was requested against a measure with no atoms."""


class SupportCapError(MeanflockError):
    """Exact transport solver refused an instance above the support cap."""

    def __init__(self, combined: int, cap: int):
        super().__init__(
            f"combined support size {combined} exceeds solver cap {cap}; "
            "subsample the measures before computing exact distances"
        )
        self.combined = combined
        self.cap = cap


class MomentOverflowError(MeanflockError):
    """exp-moment evaluation overflowed; reports the offending atom norm."""

    def __init__(self, atom_norm: float, alpha: float):
        super().__init__(
            f"exp moment overflow: alpha={alpha} with atom norm {atom_norm}"
        )
        self.atom_norm = atom_norm
        self.alpha = alpha


class BlowUpError(MeanflockError):
    """A simulated state left the configured norm bound or became non-finite.

    ``partial`` holds the trajectory recorded up to the failing step when the
    simulator had one to attach.
    """

    def __init__(self, step_index: int, max_norm: float, partial=None):
        super().__init__(
            f"state blow-up at step {step_index}: max particle norm {max_norm:.3e}"
        )
        self.step_index = step_index
        self.max_norm = max_norm
        self.partial = partial


class ConfigError(MeanflockError):
    """Invalid experiment configuration; message carries field/line context."""


class EnsembleSizeError(MeanflockError):
    """A Monte-Carlo diagnostic was invoked with too few runs or resamples."""
