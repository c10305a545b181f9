class NewsNamesError(Exception):
    """Base class for all errors raised by this package."""


class UserError(NewsNamesError):
    """Bad input from the caller: missing files, invalid config. CLI exit code 1."""


class ConfigError(UserError):
    pass


class IngestError(UserError):
    """The frame source cannot be read at all."""


class AdapterError(NewsNamesError):
    """An external detector, OCR, NER or embedding adapter failed or misbehaved."""


class BaselineUnavailable(NewsNamesError):
    """The generative endpoint could not be reached after all retries."""
