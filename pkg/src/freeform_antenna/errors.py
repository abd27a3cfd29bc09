"""Exception hierarchy shared by all stages of the design flow."""


class AntennaDesignError(Exception):
    """Base class for every error raised by this package."""


class InvalidAngleIncrement(AntennaDesignError, ValueError):
    pass


class RetriesExhausted(AntennaDesignError):
    pass


class X0OutOfTemplate(AntennaDesignError, ValueError):
    pass


class InconsistentGeometry(AntennaDesignError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EvaluatorFailure(AntennaDesignError):
    def __init__(self, message, returncode=None, output=""):
        super().__init__(message)
        self.returncode = returncode
        self.output = output


class MalformedResponse(AntennaDesignError):
    pass


class StoreCorrupt(AntennaDesignError):
    pass


class BandOutsideSweep(AntennaDesignError, ValueError):
    pass


class InvalidFeatures(AntennaDesignError):
    pass


class InvalidInitialFeatures(AntennaDesignError):
    pass


class JacobianDegenerate(AntennaDesignError):
    def __init__(self, dimensions):
        super().__init__(f"finite differences failed in both directions for dimensions {list(dimensions)}")
        self.dimensions = list(dimensions)


class ConfigError(AntennaDesignError, ValueError):
    pass
