"""Exception hierarchy shared by all modules.

Every error carries a short ``label`` so the command line can print a
stable diagnostic and map it to an exit status.
"""


class CharConeError(Exception):
    label = "Error"


# thermodynamics
class NonPositiveDensity(CharConeError):
    label = "NonPositiveDensity"


class NonPositiveSoundSpeed(CharConeError):
    label = "NonPositiveSoundSpeed"


class OutOfRange(CharConeError):
    label = "OutOfRange"


class NonConvergence(CharConeError):
    label = "NonConvergence"


class NonMonotone(CharConeError):
    label = "NonMonotone"


class NoRoot(CharConeError):
    label = "NoRoot"


# geometry
class DegenerateChart(CharConeError):
    label = "DegenerateChart"


class GridTooCoarse(CharConeError):
    label = "GridTooCoarse"


# pointwise acoustics
class MissingDerivative(CharConeError):
    label = "MissingDerivative"


# construction
class CornerIncompatible(CharConeError):
    label = "CornerIncompatible"

    def __init__(self, message, residual=float("nan"), location=None, kind="null"):
        super().__init__(message)
        self.residual = residual
        self.location = location
        self.kind = kind


class NotTangent(CharConeError):
    label = "NotTangent"


class ClosureFailure(CharConeError):
    label = "ClosureFailure"


class StepRejected(CharConeError):
    label = "StepRejected"


class MisalignedChart(CharConeError):
    label = "MisalignedChart"


class FloorReached(CharConeError):
    """Base for the two early-termination floors; carries the stop time."""

    label = "FloorReached"

    def __init__(self, message, time=float("nan")):
        super().__init__(message)
        self.time = time


class SoundSpeedFloor(FloorReached):
    label = "SoundSpeedFloor"


class KappaFloor(FloorReached):
    label = "KappaFloor"


# oracles
class RadiusCollapse(CharConeError):
    label = "RadiusCollapse"


# symbolic checker
class CyclicDependency(CharConeError):
    label = "CyclicDependency"

    def __init__(self, message, cycle=()):
        super().__init__(message)
        self.cycle = tuple(cycle)


# configuration
class ConfigError(CharConeError):
    label = "ConfigError"
