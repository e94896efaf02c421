"""Timetable-based travel time variability (TTV) to healthcare, with spatial inequality statistics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DanglingReferenceError,
    GTFSError,
    InputError,
    NoServiceError,
    StageError,
    TTVError,
    UndefinedStatisticError,
)
