"""Exception types raised across the package."""


class FrsBackdoorError(Exception):
    """Base class for all library errors."""


class ShapeError(FrsBackdoorError, ValueError):
    """Array dimensions do not match what an operation requires."""


class DomainError(FrsBackdoorError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class DegenerateGeometryError(DomainError):
    """Geometry that admits no unique transform (e.g. coincident eyes)."""


class StageError(FrsBackdoorError):
    """A pipeline stage model failed; ``stage`` names which one."""

    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class EnrollmentError(FrsBackdoorError):
    """run_frs did not reach an embedding; ``stage`` is where it stopped."""

    def __init__(self, stage, message=""):
        super().__init__(f"enrollment failed at {stage}" + (f": {message}" if message else ""))
        self.stage = stage


class ContractViolation(FrsBackdoorError):
    """A caller broke a stateful protocol (e.g. fed a pruned identity)."""
