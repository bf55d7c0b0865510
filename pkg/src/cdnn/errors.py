"""Exception types shared across the package."""


class CdnnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CdnnError, ValueError):
    """Input dimensions do not match what the model or operation expects."""


class StaleCacheError(CdnnError, RuntimeError):
    """A forward cache was reused after the network parameters changed."""


class TrainingDivergenceError(CdnnError, RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class DegenerateTreatmentError(CdnnError, ValueError):
    """Both treatment arms are required but only one is present."""


class DegenerateArmError(CdnnError, ValueError):
    """A treatment arm has too few samples for the requested fit."""


class ConfigError(CdnnError, ValueError):
    """Invalid configuration value, file, or combination."""


class SchemaError(CdnnError, ValueError):
    """A data file does not match the expected CSV schema."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class SplitError(CdnnError, ValueError):
    """Requested split fractions leave some part empty or are invalid."""


class OverlapError(CdnnError, ValueError):
    """Treatment assignment is (near-)deterministic; residual variance vanished."""


class MetricUnavailableError(CdnnError, ValueError):
    """A metric needs per-sample ground truth that the dataset does not carry."""


class InvalidPerturbationError(CdnnError, ValueError):
    """A nuisance perturbation pushes the propensity outside (0, 1)."""


class IdentityViolationError(CdnnError, RuntimeError):
    """An exact algebraic identity failed beyond tolerance (broken oracle)."""
