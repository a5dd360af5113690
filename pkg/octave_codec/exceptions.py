"""
Exception hierarchy for octave_codec.

The CLI maps these onto exit codes (see octave_codec.cli).
"""


class CodecError(Exception):
    """Base class for every error raised by octave_codec."""


class ConfigError(CodecError):
    """Invalid configuration value or argument."""


class ContractError(CodecError):
    """A documented precondition of an operation was violated."""


class ShapeError(ContractError):
    """Tensor extents break a layout invariant (e.g. half-resolution pairs)."""


class DomainError(CodecError):
    """Inputs are valid individually but the computation is undefined."""


class DatasetError(CodecError):
    """No usable images could be ingested."""


class BackendError(CodecError):
    """An external coding backend failed."""

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics


class FormatError(CodecError):
    """Malformed container or checkpoint bytes."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset
