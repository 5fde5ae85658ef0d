"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so new error kinds should
subclass one of the four top branches rather than Exception directly.
"""


class AggnormError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AggnormError):
    """Tensor shapes or dtypes are incompatible with the operation."""


class ContractError(AggnormError):
    """A documented precondition of an operation was violated."""


class ConfigError(AggnormError):
    """Invalid configuration: unknown key, bad value, missing path."""


class DataError(AggnormError):
    """Malformed corpus, dictionary, or vocabulary file."""


class SequenceLengthError(ContractError):
    """Input sequence exceeds the configured maximum length."""


class VocabularyError(DataError):
    """Token id out of range for the vocabulary."""


class DivergenceError(AggnormError):
    """Training produced a non-finite loss; carries the last good state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class CheckpointError(AggnormError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointFingerprintError(CheckpointError):
    """Checkpoint fingerprint does not match the current configuration."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint file is truncated or structurally corrupt."""
