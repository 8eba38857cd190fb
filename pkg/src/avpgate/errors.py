"""Exception hierarchy.

Errors split into two families so the CLI can map them to exit codes:
``InputError`` (bad values, exit 1) and ``FormatError`` (unreadable files,
exit 2).
"""


class AvpError(Exception):
    """Base class; ``module`` names the subsystem that raised."""

    module = "avpgate"

    def __str__(self):
        return f"{self.module}: {super().__str__()}"


class InputError(AvpError):
    pass


class FormatError(AvpError):
    module = "io"


class ValidationError(InputError):
    module = "seqio"

    def __init__(self, record, char, message=None):
        self.record = record
        self.char = char
        super().__init__(message or f"record {record!r}: invalid residue {char!r}")


class DuplicateIdError(InputError):
    module = "seqio"


class LengthError(InputError):
    module = "seqio"


class StratifyError(InputError):
    module = "seqio"


class LabelError(InputError):
    module = "seqio"


class ConfigError(InputError):
    module = "config"


class ShapeError(InputError):
    module = "diffcore"


class DomainError(InputError):
    module = "objective"


class ZeroVectorError(InputError):
    module = "objective"


class EmptyQueueError(InputError):
    module = "objective"


class EmptyError(InputError):
    module = "metrics"


class SingleClassError(InputError):
    module = "metrics"


class VarianceError(InputError):
    module = "metrics"


class MissingEmbeddingError(InputError):
    module = "embed"


class VersionError(FormatError):
    module = "checkpoint"


class CorruptionError(FormatError):
    module = "checkpoint"
