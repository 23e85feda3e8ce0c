"""Exception types shared across the package."""


class MmfitError(Exception):
    """Base class for all package-specific errors."""


class InvalidConfig(MmfitError):
    """A configuration value is outside its legal range."""


class DegenerateSample(MmfitError):
    """A solver matrix is rank-deficient beyond tolerance."""


class ExhaustedData(MmfitError):
    """Fewer points are available than a sampler or solver needs."""


class ParseError(MmfitError):
    """A scene or image file could not be parsed.

    Carries the 1-based line number when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionMismatch(MmfitError):
    """Point dimension disagrees with the declared model type."""


class LabelMismatch(MmfitError):
    """Ground-truth labels do not cover the point set."""


class NoValidPose(MmfitError):
    """Every pose candidate has zero support."""


class RankDeficient(MmfitError):
    """A linear system has too low a rank for a unique solution."""


class DegenerateHomography(MmfitError):
    """A homography is too close to singular to decompose."""
