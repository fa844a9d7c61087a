"""Exception types raised by the library."""


class DualityError(Exception):
    """Base class for all library errors."""


class InvalidMatrix(DualityError, ValueError):
    """Input is not a finite, non-empty 2-D real matrix."""


class ShapeMismatch(DualityError, ValueError):
    pass


class ZeroNormColumn(DualityError, ValueError):
    pass


class ZeroNormRow(DualityError, ValueError):
    pass


class NotNormalized(DualityError, ValueError):
    """Columns (or rows) do not have the norm the operation requires."""


class NotStandardized(DualityError, ValueError):
    pass


class NotDoublyNormalized(DualityError, ValueError):
    pass


class UnknownLoss(DualityError, KeyError):
    pass


class DivergedLoss(DualityError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.value = value


class ConfigError(DualityError, ValueError):
    """Invalid or incomplete configuration; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class MatrixParseError(DualityError, ValueError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row
