"""Exception hierarchy shared across the toolkit.

Validation failures (bad inputs, bad configs) and runtime failures (missing
checkpoints, broken files) are kept on separate branches so the CLI can map
them to distinct exit codes.
"""


class RestorkitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RestorkitError):
    """Caller handed us something malformed: bad config, bad params, bad shapes."""


class ImageError(ValidationError):
    """An image violates the pixel-array contract (shape, range, finiteness)."""


class DegradationError(ValidationError):
    """Unknown degradation kind or out-of-range degradation parameter."""


class ManifestError(ValidationError):
    """A dataset manifest is missing, malformed, or inconsistent."""


class ConfigError(ValidationError):
    """A run configuration failed schema or invariant checks."""


class ShapeError(ValidationError):
    """Tensor arguments disagree with the configured dimensions."""


class RuntimeFailure(RestorkitError):
    """Something needed at run time is absent or broken (I/O, checkpoints)."""


class CheckpointError(RuntimeFailure):
    """A checkpoint is missing, corrupted, or has an incompatible version."""


class ProviderNotLoadedError(RuntimeFailure):
    """An encoder provider was asked to embed images before weights were loaded."""


class MissingComponentError(RuntimeFailure):
    """A pipeline stage needs a model component that was never supplied."""


class StageOrderError(RuntimeFailure):
    """A training stage was invoked before its prerequisite stage."""
