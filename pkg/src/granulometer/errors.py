"""Exception types raised across the toolkit."""


class GranulometerError(Exception):
    """Base class for every error the toolkit raises on bad input or failed analysis."""


# raster / file decoding
class MalformedHeader(GranulometerError):
    pass


class TruncatedPayload(GranulometerError):
    pass


class UnsupportedDepth(GranulometerError):
    pass


class ParseError(GranulometerError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyAnnotation(GranulometerError):
    pass


# delineation
class LowContrast(GranulometerError):
    """Raised when an image carries too little signal to delineate (dark scene)."""


class NoScaleFound(GranulometerError):
    pass


class DimensionMismatch(GranulometerError):
    pass


# granulometry
class DomainError(GranulometerError, ValueError):
    pass


class EmptyNet(GranulometerError):
    pass


class EmptyInput(GranulometerError):
    pass


class TooFewPoints(GranulometerError):
    pass


class NoConvergence(GranulometerError):
    pass


class ZeroReference(GranulometerError):
    pass


# synthetic scenes
class PackingFailure(GranulometerError):
    pass


# flight planning
class TiltExceedsLimit(GranulometerError):
    pass


class PolygonDegenerate(GranulometerError):
    pass


class CoverageInfeasible(GranulometerError):
    pass
