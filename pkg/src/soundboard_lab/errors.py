"""Exception hierarchy shared by all modules."""


class SoundboardLabError(Exception):
    pass


class GeometryError(SoundboardLabError, ValueError):
    pass


class TooFewSamplesError(GeometryError):
    pass


class SampleOutsideBoundaryError(GeometryError):
    pass


class DegenerateBoundaryError(GeometryError):
    pass


class PathOutsideMaskError(GeometryError):
    pass


class LayoutSchemaError(GeometryError):
    pass


class StationOffBridgeError(GeometryError):
    pass


class MaterialError(SoundboardLabError, ValueError):
    pass


class UnstableConfigurationError(SoundboardLabError):
    """Explicit scheme would blow up at the requested time step."""

    def __init__(self, message, node=None, stability_number=None):
        super().__init__(message)
        self.node = node
        self.stability_number = stability_number


class DivergenceError(SoundboardLabError):
    def __init__(self, message, step=None, node=None):
        super().__init__(message)
        self.step = step
        self.node = node


class CalibrationError(SoundboardLabError):
    pass


class InsufficientDecayError(SoundboardLabError, ValueError):
    pass


class UndefinedCentroidError(SoundboardLabError, ValueError):
    pass


class StationMismatchError(SoundboardLabError, ValueError):
    pass


class LoadCaseError(SoundboardLabError, ValueError):
    pass


class ConvergenceError(SoundboardLabError):
    pass
