"""Exception types shared across the package.

Each error condition raised by the public API has a named class here so
callers can catch precisely what they care about.
"""


class DRStackError(Exception):
    """Base class for all package-specific errors."""


# --- image preprocessing ---

class NonSquareInputError(DRStackError):
    """Circle masking needs a square image; pad or resize first."""


# --- labels / resampling ---

class InvalidGradeError(DRStackError):
    """Grade outside the 0..4 severity scale."""


class EmptyClassError(DRStackError):
    """A class with zero source samples cannot be resampled."""


class IndexOutOfRangeError(DRStackError):
    """A resample plan references indices the dataset does not have."""


# --- layer-shape arithmetic ---

class FilterTooLargeError(DRStackError):
    """Convolution filter exceeds the padded input extent."""


class WindowTooLargeError(DRStackError):
    """Pooling window exceeds the input extent."""


class LayerOrderError(DRStackError):
    """Layer chain requests a geometrically impossible sequence."""


class DenseBeforeFlattenError(LayerOrderError):
    """Dense layer placed before the volume was flattened."""


# --- models ---

class UnknownBackboneError(DRStackError):
    """Backbone name not present in the registry."""


class BackboneUnavailableError(DRStackError):
    """Backbone is registered but cannot be materialized here."""


class ShapeMismatchError(DRStackError):
    """Declared and computed layer shapes disagree."""


class LayerPlanError(DRStackError):
    """Meta-model layer plan deviates from the required sequence."""


class EmptyDatasetError(DRStackError):
    """Training requires at least one sample."""


class NonFiniteLossError(DRStackError):
    """Loss became NaN/inf during training; aborting instead of skipping."""


class UnpreprocessedInputError(DRStackError):
    """Prediction input does not have the preprocessed shape."""


class CheckpointMismatchError(DRStackError):
    """Checkpoint fingerprint does not match the model being loaded."""


# --- metrics ---

class LengthMismatchError(DRStackError):
    """Actual and predicted label sequences differ in length."""


class EmptyInputError(DRStackError):
    """Metric computation needs at least one scored sample."""


class DegenerateMarginalsError(DRStackError):
    """Kappa denominator is zero and the raters do not agree exactly."""


# --- dataset / pipeline ---

class MalformedCSVError(DRStackError):
    """Label CSV is missing the expected header columns."""


class NoValidRecordsError(DRStackError):
    """Ingest produced zero usable records."""


class ClassTooSmallError(DRStackError):
    """Stratified splitting needs at least two records per grade."""


class ConfigError(DRStackError):
    """Configuration file or override could not be parsed."""


class PipelineStageError(DRStackError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
