# errors.py
"""Exception types shared by the detection, ingest and CLI modules."""

from __future__ import annotations

from typing import Optional, Tuple


class AliasSeabedError(Exception):
    """Base class for every error raised by this project."""


class ShapeMismatchError(AliasSeabedError, ValueError):
    def __init__(self, what: str, a: Tuple[int, ...], b: Tuple[int, ...]):
        self.shapes = (tuple(a), tuple(b))
        super().__init__(f"{what}: shape {tuple(a)} does not match shape {tuple(b)}")


class ParameterError(AliasSeabedError, ValueError):
    pass


class AliasDomainError(AliasSeabedError, ValueError):
    pass


class UnknownFrequencyError(AliasSeabedError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message for the CLI.
        return str(self.args[0]) if self.args else ""


class BundleFormatError(AliasSeabedError, ValueError):
    pass


class ConfigError(AliasSeabedError, ValueError):
    """Malformed detection config file."""


class EmptyInputError(AliasSeabedError, ValueError):
    pass


class RawFormatError(AliasSeabedError, ValueError):
    """RAW stream problem; `offset` is the byte offset where it was found."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class RawCorruptionError(RawFormatError):
    pass


class RawTruncationError(RawFormatError):
    pass


class DatagramTypeError(RawFormatError):
    pass
