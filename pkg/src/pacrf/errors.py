"""Exception hierarchy shared by every pacrf module."""


class PacrfError(Exception):
    """Base class for all errors raised by pacrf."""


class InvalidShapeError(PacrfError, ValueError):
    pass


class InvalidLabelError(PacrfError, ValueError):
    pass


class InvalidNameError(PacrfError, ValueError):
    pass


class DuplicateTypeError(PacrfError, ValueError):
    pass


class EmptyInputError(PacrfError, ValueError):
    pass


class CorpusMismatchError(PacrfError, ValueError):
    pass


class CorpusFormatError(PacrfError, ValueError):
    """A corpus file line could not be parsed; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EpisodeInfeasibleError(PacrfError, ValueError):
    pass


class InvalidConfigError(PacrfError, ValueError):
    pass


class MissingEmbeddingError(PacrfError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing embedding"


class OracleInvalidError(PacrfError, RuntimeError):
    pass


class CorruptCheckpointError(PacrfError, ValueError):
    pass


class DivergenceError(PacrfError, RuntimeError):
    pass


class CheckpointVersionError(CorruptCheckpointError):
    """The checkpoint was written by an incompatible format version."""
