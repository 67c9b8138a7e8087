from typing import Iterable, Optional


class RefClassError(Exception):
    pass


class ConfigError(RefClassError):
    pass


class DataError(RefClassError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class IntegrityError(DataError):
    pass


class MissingYearsError(DataError):
    def __init__(self, years: Iterable[int]):
        self.years = sorted(set(years))
        super().__init__(f"CPI index missing for years: {', '.join(str(y) for y in self.years)}")


class UnknownFirmError(DataError):
    pass


class DomainError(RefClassError, ValueError):
    pass


class SelectionError(RefClassError):
    """A forecast case that cannot produce a reference class; the backtest counts it as skipped."""

    reason = "selection"


class InsufficientCandidatesError(SelectionError):
    reason = "insufficient_candidates"


class UndersizedClassError(SelectionError):
    reason = "undersized_class"


class DegenerateError(SelectionError):
    reason = "degenerate"


class MissingValueError(SelectionError):
    reason = "missing_target_value"
