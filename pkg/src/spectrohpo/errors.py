"""Exception hierarchy shared by every stage of the pipeline."""


class SpectroHPOError(Exception):
    """Base class for all package errors."""


class ArgumentError(SpectroHPOError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ArgumentError):
    """Array shapes are inconsistent with the model or with each other."""


class DataError(SpectroHPOError):
    """Input data could not be used (bad file, bad row, degenerate content)."""


class SchemaError(DataError):
    """A CSV header or row does not match the canonical layout."""


class RowError(DataError):
    """A single data row holds an unparseable or non-finite value."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class DegenerateSpectrumError(DataError):
    """A spectrum has (near) zero variance, so SNV is undefined."""


class DegenerateSplitError(DataError):
    """A partition left the calibration or validation set empty."""


class TrialLogError(DataError):
    """A trial-log line could not be parsed or validated."""

    def __init__(self, line: int, message: str):
        super().__init__(f"trial log line {line}: {message}")
        self.line = line


class DivergenceError(SpectroHPOError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
