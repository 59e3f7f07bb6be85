"""Exception hierarchy shared by every STMT module."""

from pathlib import Path
from typing import Optional, Union


class StmtError(Exception):
    """Base class for all tracker errors."""


class DimensionError(StmtError):
    """Operand shapes do not agree."""


class ContractError(StmtError):
    """A caller broke an operation's precondition."""


class ConfigError(StmtError):
    """Invalid configuration value or combination."""


class SingularityError(StmtError):
    """A normalization would divide by zero."""


class NonFiniteError(StmtError):
    """An op produced NaN or Inf."""


class SpecError(StmtError):
    """Invalid synthetic sequence specification."""


class SampleSkipped(StmtError):
    """A training sample cannot be used (too short, target outside crop)."""


class ParseError(StmtError):
    """A file could not be parsed; carries the file and the offending offset."""

    def __init__(
        self,
        message: str,
        path: Optional[Union[str, Path]] = None,
        offset: Optional[int] = None,
    ):
        self.path = str(path) if path is not None else None
        self.offset = offset
        where = ""
        if self.path is not None:
            where = f"{self.path}"
            if offset is not None:
                where += f"@{offset}"
            where += ": "
        super().__init__(f"{where}{message}")


class MalformedHeaderError(ParseError):
    pass


class UnsupportedMaxvalError(ParseError):
    pass


class ShortPayloadError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass


class GroundTruthLineError(ParseError):
    """Bad ground-truth line; ``offset`` is the 1-based line number."""
