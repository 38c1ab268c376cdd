"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class UrbandepError(Exception):
    exit_code = 5


class ConfigError(UrbandepError):
    exit_code = 2


class DataError(UrbandepError):
    exit_code = 3


class FormatError(DataError):
    """A table or geometry file does not have the expected structure."""


class RowError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class GeometryError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


class UnresolvedAreaError(DataError):
    def __init__(self, area_ids):
        self.area_ids = list(area_ids)
        super().__init__("unresolved areas: " + ", ".join(self.area_ids))


class EmptyInputError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class SplitError(DataError):
    pass


class DegeneracyError(UrbandepError):
    """Zero variance or a non-positive variance estimate made a statistic undefined."""

    exit_code = 4


class GenerationError(UrbandepError):
    pass
