"""Exception hierarchy shared by the pipeline modules and the CLI.

Each class carries the process exit code the CLI uses when it escapes.
"""

from __future__ import annotations


class FineEHRError(Exception):
    exit_code = 1


class ConfigError(FineEHRError, ValueError):
    exit_code = 2


class DataError(FineEHRError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    """A required CSV column is missing."""

    def __init__(self, column: str):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class RowError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateKeyError(DataError):
    def __init__(self, key: str, line: int):
        super().__init__(f"line {line}: duplicate HADM_ID {key!r}")
        self.key = key
        self.line = line


class TrainingError(FineEHRError, RuntimeError):
    exit_code = 4


class LeakageError(TrainingError):
    """A training stage was handed data from outside the training split."""

    def __init__(self, stage: str, leaked: list[str]):
        shown = ", ".join(leaked[:5])
        more = f" (+{len(leaked) - 5} more)" if len(leaked) > 5 else ""
        super().__init__(
            f"[{stage}] non-training admissions reached a training stage: {shown}{more}"
        )
        self.stage = stage
        self.leaked = leaked


class StageError(FineEHRError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException, exit_code: int):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code
