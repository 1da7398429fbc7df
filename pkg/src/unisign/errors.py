"""Exception types shared across the package."""


class UniSignError(Exception):
    """Base class for all errors raised by this package."""


class MalformedFileError(UniSignError):
    """A keypoint/manifest/config file violates its documented format."""


class EmptyClipError(UniSignError):
    """A pose sequence contains zero frames."""


class IndexOutOfRangeError(UniSignError):
    """A keypoint or frame index is outside the valid range."""


class ConfigMismatchError(UniSignError):
    """A configuration value is inconsistent with the data it describes."""


class GroupMissingError(UniSignError):
    """A required sub-pose group is absent."""


class LengthMismatchError(UniSignError):
    """Per-group feature sequences disagree on length or width."""


class DecodeError(UniSignError):
    """A video frame or image could not be decoded."""


class EmptyTargetError(UniSignError):
    """A supervision target has no tokens."""


class EmptyReferenceError(UniSignError):
    """A metric reference sequence is empty."""


class EmptyInputError(UniSignError):
    """A metric received no records."""


class EmptyCorpusError(UniSignError):
    """Corpus statistics requested over zero records."""


class MissingAnnotationError(UniSignError):
    """A clip record lacks the annotation field a task needs."""


class MissingPrereqCheckpointError(UniSignError):
    """A training stage was started without its prerequisite checkpoint."""


class DivergedLossError(UniSignError):
    """The training loss became non-finite."""


class UnsupportedTaskError(UniSignError):
    """The requested task has no implementation in this mode."""


class ConfigError(UniSignError):
    """A run-config file contains unknown or invalid keys."""
