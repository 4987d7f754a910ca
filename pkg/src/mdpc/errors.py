"""Shared exception types."""


class DivergenceError(RuntimeError):
    """A numerical trajectory produced a non-finite value."""


class ConfigError(ValueError):
    """An experiment configuration file is malformed or incomplete."""
