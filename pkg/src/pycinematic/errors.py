"""Exception hierarchy shared by every pycinematic module."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from pycinematic.geometry import CurvatureReport
    from pycinematic.grids import Box


class LabError(Exception):
    """Base class of every domain failure raised by pycinematic."""


class InvalidParameterError(LabError, ValueError):
    """A parameter lies outside the admissible range of an operation."""


class DegenerateChartError(LabError):
    """The chart Jacobian is rank deficient at the evaluated point."""


class NonTransverseError(LabError):
    """The position vector lies in the span of the tangent space."""


class UnsupportedChartError(LabError):
    """The requested quantity is undefined for this kind of chart."""


class DomainMismatchError(LabError, ValueError):
    """Two fields that must share a domain box do not."""


class CinematicViolationError(LabError):
    """No case of the local dichotomy holds on a subcube."""

    def __init__(self, message: str, subcube: Box) -> None:
        """Record the offending `subcube`."""
        super().__init__(message)
        self.subcube: Box = subcube


class InvalidScaleError(LabError, ValueError):
    """A scale exponent is incompatible with the set it applies to."""


class TooFineError(LabError, ValueError):
    """A dyadic scale exceeds the representable cap for its dimension."""


class TooCoarseError(LabError, ValueError):
    """A quadrature resolution is too coarse for the requested thickness."""


class FlowDegenerateError(LabError):
    """The normalized gradient flow hit a point where the gradient vanishes."""


class PreconditionError(LabError):
    """A mode precondition of a one-dimensional or polar computation failed."""

    def __init__(self, message: str, inequality: str) -> None:
        """Record the failed `inequality` in readable form."""
        super().__init__(message)
        self.inequality: str = inequality


class NonInteriorCriticalPointError(PreconditionError):
    """The critical point used for polar slicing is not interior to the box."""

    def __init__(self, message: str, boundary_distance: float) -> None:
        """Record the signed distance from the critical point to the box boundary."""
        super().__init__(message, "x_M interior")
        self.boundary_distance: float = boundary_distance


class MisalignedCellError(LabError):
    """A configuration cell does not meet the vertical neighborhood of its graph."""

    def __init__(self, message: str, field_index: int, cell: tuple[int, ...]) -> None:
        """Record which member and which cell failed."""
        super().__init__(message)
        self.field_index: int = field_index
        self.cell: tuple[int, ...] = cell


class SpreadViolationError(LabError):
    """A set exceeds its allowed spread constant."""

    def __init__(self, message: str, center: tuple[float, ...], radius: float, constant: float) -> None:
        """Record the witness ball and the measured constant."""
        super().__init__(message)
        self.center: tuple[float, ...] = center
        self.radius: float = radius
        self.constant: float = constant


class InvalidFamilyError(LabError):
    """A function family violates a structural requirement such as δ-separation."""


class OutOfRegimeError(LabError):
    """The exponents lie outside the range where the incidence bound applies."""


class InsufficientScalesError(LabError, ValueError):
    """Too few scales were supplied for a least-squares slope fit."""


class ChartGateError(LabError):
    """A chart failed the non-degeneracy gate required by an experiment."""

    def __init__(self, message: str, report: CurvatureReport) -> None:
        """Keep the curvature report explaining the refusal."""
        super().__init__(message)
        self.report: CurvatureReport = report
