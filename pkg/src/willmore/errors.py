"""Exception types raised across the package.

Every topology error names the first offending simplex so failing meshes
can be repaired by hand.
"""


class WillmoreError(Exception):
    """Base class for all package errors."""


# -- mesh construction / IO --------------------------------------------------

class MeshError(WillmoreError):
    pass


class NonManifold(MeshError):
    pass


class OpenBoundary(MeshError):
    pass


class WrongGenus(MeshError):
    pass


class InconsistentOrientation(MeshError):
    pass


class DegenerateFace(MeshError):
    pass


class ParseError(MeshError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IoError(MeshError):
    pass


class RemeshFailed(MeshError):
    pass


# -- discrete geometry -------------------------------------------------------

class GeometryError(WillmoreError):
    pass


class NumericallyDegenerate(GeometryError):
    pass


class LengthMismatch(GeometryError):
    pass


# -- functionals ---------------------------------------------------------------

class FunctionalError(WillmoreError):
    pass


class NonpositiveVolume(FunctionalError):
    pass


class ZeroDenominator(FunctionalError):
    pass


# -- flow ----------------------------------------------------------------------

class FlowError(WillmoreError):
    pass


class EnergyCapExceeded(FlowError):
    pass


class LineSearchStalled(FlowError):
    pass


class InsufficientTrace(FlowError):
    pass


# -- shape generators / oracle ---------------------------------------------------

class ShapeError(WillmoreError):
    pass


class LevelTooLarge(ShapeError):
    pass


class SelfIntersectingRadial(ShapeError):
    pass


class SingularFit(ShapeError):
    pass


class QuadratureNotConverged(ShapeError):
    pass


# -- harness ---------------------------------------------------------------------

class HarnessError(WillmoreError):
    pass


class RunDiverged(HarnessError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class GenerationFailed(HarnessError):
    pass


class FitResidualTooLarge(HarnessError):
    pass
