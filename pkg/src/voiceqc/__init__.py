"""Quality control and enhancement for sustained-vowel Parkinson's screening."""

__version__ = "0.1.0"

PIPELINE_RATE = 8000


class VoiceQcError(Exception):
    """Base error for the package."""


class ConfigError(VoiceQcError, ValueError):
    """Invalid configuration or parameters."""


class DataError(VoiceQcError, ValueError):
    """Malformed or degenerate input data."""
