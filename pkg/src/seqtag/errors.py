"""Exception hierarchy shared across the toolkit."""


class SeqtagError(Exception):
    """Base class for all toolkit errors."""


class ParseError(SeqtagError):
    """Malformed corpus input; carries the offending file and line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class SchemaError(SeqtagError):
    """Label or taxonomy inconsistent with the active label schema."""


class FormatError(SeqtagError):
    """Corrupt or truncated binary file; carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class AlignmentError(SeqtagError):
    """Corpus and embedding file do not describe the same sentences."""


class ConfigError(SeqtagError):
    """Invalid or inconsistent run configuration."""


class NumericError(SeqtagError):
    """Non-finite loss or otherwise numerically broken state."""
