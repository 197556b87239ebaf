"""Exception hierarchy.

``InputError`` subclasses describe bad user input (CLI exit code 2); everything
else deriving from ``FaceXplainError`` is a pipeline failure (exit code 1).
"""


class FaceXplainError(Exception):
    pass


class InputError(FaceXplainError, ValueError):
    pass


class LandmarkParseError(InputError):
    pass


class ConventionMismatchError(InputError):
    pass


class CoordinateRangeError(InputError):
    pass


class RegionSpecError(InputError):
    pass


class DegenerateRegionError(InputError):
    def __init__(self, region, detail="zero raster area"):
        super().__init__(f"degenerate region {region!r}: {detail}")
        self.region = region


class RegionMismatchError(InputError):
    pass


class ImageSizeError(InputError):
    pass


class ConfigError(InputError):
    pass


class EmbeddingError(FaceXplainError):
    """Raised by backends; ``index`` is set when the failure came from a batch."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MissingEmbeddingError(EmbeddingError):
    pass


class ZeroNormError(EmbeddingError):
    pass


class DimensionMismatchError(EmbeddingError):
    pass


class SolverError(FaceXplainError):
    pass


class RankingError(InputError):
    pass


class CorpusError(FaceXplainError):
    pass
