"""Exception hierarchy shared across the package.

Every error raised by this package derives from CdpError so callers can
catch one type. The CLI maps subtypes to exit codes; see cli.main.
"""


class CdpError(Exception):
    """Base class for all errors raised by cdplot."""


class ConfigError(CdpError):
    """A run configuration or model spec file is invalid."""


class DataError(CdpError):
    """A dataset file could not be ingested."""
