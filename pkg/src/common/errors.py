"""Exception hierarchy shared by every tail regression module."""

from __future__ import annotations


class TailRegressionError(Exception):
    """Base class; ``kind`` is reported in machine-readable error records."""

    exit_code: int = 1

    @property
    def kind(self) -> str:
        return type(self).__name__


class UsageError(TailRegressionError, ValueError):
    exit_code = 1


class DataError(TailRegressionError, ValueError):
    exit_code = 2


class NumericalError(TailRegressionError, ArithmeticError):
    exit_code = 3


class InvalidAlpha(UsageError):
    pass


class BandwidthOutOfRange(UsageError):
    pass


class InvalidConfig(UsageError):
    pass


class EmptyDataset(DataError):
    pass


class NonPositiveResponse(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class DegenerateCoordinate(DataError):
    pass


class NoExceedances(DataError):
    pass


class NoLocalExceedances(DataError):
    pass


class InsufficientLocalData(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyResiduals(DataError):
    pass


class EmptyGrid(DataError):
    pass


class FileNotFound(DataError):
    pass


class ParseError(DataError):
    """A CSV cell that could not be read as a number."""

    def __init__(self, row: int, column: str, value: object = None) -> None:
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class SingularHessian(NumericalError):
    pass


class AllCandidatesFailed(NumericalError):
    pass


class AllPointsFailed(NumericalError):
    pass


class ZeroLocalInformation(NumericalError):
    pass


class DegenerateXi(NumericalError):
    pass


__all__ = [
    "AllCandidatesFailed",
    "AllPointsFailed",
    "BandwidthOutOfRange",
    "DataError",
    "DegenerateCoordinate",
    "DegenerateXi",
    "DimensionMismatch",
    "EmptyDataset",
    "EmptyGrid",
    "EmptyInput",
    "EmptyResiduals",
    "FileNotFound",
    "InsufficientLocalData",
    "InvalidAlpha",
    "InvalidConfig",
    "NoExceedances",
    "NoLocalExceedances",
    "NonPositiveResponse",
    "NumericalError",
    "ParseError",
    "ShapeMismatch",
    "SingularHessian",
    "TailRegressionError",
    "UsageError",
    "ZeroLocalInformation",
]
