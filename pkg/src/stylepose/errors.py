"""Exception hierarchy shared across the package."""


class StyleposeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(StyleposeError):
    """A configuration value is invalid or inconsistent."""


class InputError(StyleposeError):
    """An input array, file, or argument violates an operation's contract."""


class IngestionError(StyleposeError):
    """A corpus file (manifest, image, IUV map) could not be ingested."""


class SamplingError(StyleposeError):
    """The sampler cannot produce a sample from the given manifest."""


class CheckpointError(StyleposeError):
    """A checkpoint or container file is missing, corrupt, or incompatible."""


class TrainingDivergedError(StyleposeError):
    """Training produced a non-finite loss term."""
