"""Backdoor poisoning, face recognition pipeline evaluation and pruning defense."""

from ._kernels import BACKEND
from .errors import (ContractViolation, DegenerateGeometryError, DomainError, EnrollmentError,
                     FrsBackdoorError, ShapeError, StageError)
from .geometry import BoundingBox

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BoundingBox", "ContractViolation", "DegenerateGeometryError", "DomainError",
    "EnrollmentError", "FrsBackdoorError", "ShapeError", "StageError", "__version__",
]
