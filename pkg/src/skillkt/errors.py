"""Shared exception types."""


class SkillKTError(Exception):
    """Base class for all skillkt errors."""


class ConfigError(SkillKTError, ValueError):
    """Invalid configuration value or unknown option."""


class ShapeError(SkillKTError, ValueError):
    """Tensor operation received non-conforming shapes."""


class DataError(SkillKTError, ValueError):
    """Malformed input file or record."""


class CheckpointError(SkillKTError, ValueError):
    """Unreadable or incompatible checkpoint."""


class MetricError(SkillKTError, ValueError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class NumericalError(SkillKTError, RuntimeError):
    """Non-finite values encountered during optimization."""
