from typing import List, Optional


class AsmrError(Exception):
    """Base error. `exit_code` is what the CLI returns to the shell."""
    exit_code = 1

    def __init__(self, message: str, problems: Optional[List[str]] = None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class ConfigError(AsmrError):
    exit_code = 2


class DataError(AsmrError):
    exit_code = 3


class DimensionError(DataError):
    pass


class QueryError(DataError):
    pass


class NumericError(AsmrError):
    exit_code = 4
