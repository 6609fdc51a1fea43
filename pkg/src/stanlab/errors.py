"""Exception hierarchy shared across the package."""


class StanlabError(Exception):
    """Base class for all errors raised by stanlab."""


class DimensionError(StanlabError):
    """Operand shapes (or dtypes) are incompatible with an operation."""


class ConfigurationError(StanlabError):
    """A configuration value is invalid or inconsistent."""


class FormatError(StanlabError):
    """A serialized artifact is malformed.

    ``kind`` distinguishes the failure: "bad_magic", "bad_version",
    "bad_dtype", "bad_rank", "extent_overflow", "truncated", "checksum".
    """

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class DataLoadError(StanlabError):
    """A dataset or clip failed validation while loading."""


class ContractError(StanlabError):
    """A caller violated an API precondition."""
