"""
Error Hierarchy Module

Every failure raised by the mapping back-end derives from SemLoopError.
DataError covers bad inputs (files, geometry, configuration), NumericalError
covers ill-conditioned math, and PipelineError wraps either one with the
pipeline stage that was running.

Author: LunaLynx12
"""

from typing import Optional


class SemLoopError(Exception):
    """
    Base class for all back-end errors.
    """


class DataError(SemLoopError, ValueError):
    """
    Raised when input data or configuration is malformed or degenerate.
    """


class NumericalError(SemLoopError, ArithmeticError):
    """
    Raised when a computation is numerically ill-posed.
    """


class ParseError(DataError):
    """
    A detection or trajectory file line could not be parsed.

    Attributes:
        line (int): 1-based line number of the offending record
    """
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(DataError):
    """
    A record parsed but a required field is missing or invalid.

    Attributes:
        line (int): 1-based line number of the offending record
        field (str): Name of the missing or invalid field
    """
    def __init__(self, message: str, line: int, field: str):
        super().__init__(f"line {line}: field '{field}': {message}")
        self.line = line
        self.field = field


class EmptyPatch(DataError):
    pass


class EmptyHistory(DataError):
    pass


class DimMismatch(DataError):
    pass


class NoOverlap(DataError):
    pass


class DegenerateGeometry(DataError):
    pass


class NotVisible(DataError):
    """
    The cuboid projects to nothing inside the image.
    """


class PlacementFailure(DataError):
    pass


class AngleNearPi(NumericalError):
    """
    The rotation angle is too close to pi for a well-conditioned SE(3) log.
    """


class SingularNormalEquations(NumericalError):
    pass


class PipelineError(SemLoopError):
    """
    Stage-tagged wrapper for a module error raised inside run_pipeline.

    Attributes:
        stage (str): Pipeline stage name (e.g. "data_association")
        cause (SemLoopError): Original error
    """
    def __init__(self, stage: str, cause: Optional[BaseException]):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def root_cause(e: BaseException) -> BaseException:
    while isinstance(e, PipelineError) and e.cause is not None:
        e = e.cause
    return e


def exit_code(e: BaseException) -> int:
    """
    Process exit code for an error: 2 for bad data, 3 for numerical failure, 1 otherwise.
    """
    cause = root_cause(e)
    if isinstance(cause, (NumericalError, ArithmeticError)):
        return 3
    if isinstance(cause, (DataError, ValueError, FileNotFoundError)):
        return 2
    return 1


def http_status(e: BaseException) -> int:
    return 500 if isinstance(root_cause(e), NumericalError) else 422
