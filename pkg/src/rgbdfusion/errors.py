"""Exception types shared across the package."""


class RgbdFusionError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RgbdFusionError, ValueError):
    pass


class NonPositiveDepth(RgbdFusionError, ValueError):
    pass


class InvalidRotation(RgbdFusionError, ValueError):
    pass


# dataset errors
class DatasetError(RgbdFusionError):
    pass


class MissingIndexFile(DatasetError, FileNotFoundError):
    pass


class UnreadableImage(DatasetError):
    def __init__(self, path, reason=""):
        self.path = path
        super().__init__(f"cannot read image {path}" + (f": {reason}" if reason else ""))


class ParseError(DatasetError, ValueError):
    def __init__(self, path, line_number, message):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class NonUnitQuaternion(ParseError):
    pass


# estimation errors; the pipeline catches these per frame
class EstimationError(RgbdFusionError):
    pass


class InsufficientMatches(EstimationError):
    pass


class DegenerateConfiguration(EstimationError):
    pass


class DegenerateGeometry(EstimationError):
    pass


class EmptyCorrespondences(EstimationError):
    pass


class InsufficientCorrespondences(EstimationError):
    pass


class AllSamplesDegenerate(EstimationError):
    pass


class InsufficientOverlap(EstimationError):
    pass


# evaluation errors
class EvaluationError(RgbdFusionError):
    pass


class NoAssociations(EvaluationError):
    pass


class InsufficientPairs(EvaluationError):
    pass


class SpanTooShort(EvaluationError):
    pass
