class SdtlError(Exception):
    """Base class for errors raised by sdtl."""


class ShapeError(SdtlError, ValueError):
    """Incompatible tensor dimensions."""


class ConfigError(SdtlError, ValueError):
    """Invalid configuration or hyperparameter combination."""


class ContractError(SdtlError, ValueError):
    """A call violated an operation precondition."""


class InputError(SdtlError, ValueError):
    """Bad user-supplied data (empty dataset, image too small, ...)."""


class ParseError(SdtlError, ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class FormatError(SdtlError, ValueError):
    """Unsupported file format variant."""
