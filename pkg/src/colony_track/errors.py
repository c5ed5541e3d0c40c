"""Exception types shared across the package."""


class ColonyTrackError(Exception):
    """Base class for package-specific failures."""


class ValidationError(ColonyTrackError):
    """Invalid configuration, file content, or call arguments (CLI exit 2)."""


class InfeasibleError(ColonyTrackError):
    """A constrained problem has no admissible solution (CLI exit 3)."""
