"""Exception hierarchy shared by all modules."""


class TwoScaleError(Exception):
    """Base class for every error raised by the package."""


class GeometryError(TwoScaleError, ValueError):
    pass


class RadiusOrdering(GeometryError):
    pass


class UnsupportedDim(GeometryError):
    pass


class MeshFailure(TwoScaleError):
    pass


class MissingInterface(TwoScaleError):
    pass


class SolverError(TwoScaleError):
    """Base class for failures of a numerical solve (CLI exit code 3)."""


class SingularSystem(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class SolverDiverged(SolverError):
    pass


class StepRejected(SolverError):
    pass


class MissingCorrector(TwoScaleError):
    pass


class NegativeRate(TwoScaleError, ValueError):
    pass


class NegativeInitialData(TwoScaleError, ValueError):
    pass


class ResolutionTooCoarse(TwoScaleError, ValueError):
    pass


class MismatchedConfigs(TwoScaleError, ValueError):
    pass


class ConfigError(TwoScaleError, ValueError):
    """Base class for configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line else ""
        super().__init__(f"{message}{where}")


class UnknownKey(ConfigError):
    pass


class MissingSection(ConfigError):
    pass
