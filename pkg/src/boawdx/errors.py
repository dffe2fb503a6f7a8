"""Exception hierarchy. Each family maps to a CLI exit code."""


class BoawError(Exception):
    exit_code = 1


class ValidationError(BoawError, ValueError):
    """Invalid configuration or manifest, detected before any work runs."""

    exit_code = 2


class DataError(BoawError, ValueError):
    """Input data is malformed or violates a schema."""

    exit_code = 3


class FormatError(DataError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class SchemaError(DataError):
    pass


class ArtifactVersionError(DataError):
    pass


class CorruptArtifactError(DataError):
    pass


class EmptySubjectError(DataError):
    pass


class LeakageError(DataError):
    """Train and test subject sets overlap."""


class FoldError(DataError):
    """A cross-validation fold cannot be trained (e.g. a class vanished)."""


class ConvergenceError(BoawError, RuntimeError):
    exit_code = 4
