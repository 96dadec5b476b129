"""Error classes shared across the engine.

Each class maps to a distinct CLI exit code, see :mod:`soundloom.cli`.
"""


class SoundloomError(Exception):
    """Base class for engine errors."""


class ConfigError(SoundloomError):
    """Invalid or inconsistent engine configuration."""


class CheckpointError(SoundloomError):
    """Missing, corrupt, or version-mismatched checkpoint file."""


class SinkError(SoundloomError):
    """Audio sink failed to open or accept samples."""
