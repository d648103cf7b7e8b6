"""Exception hierarchy shared by every subpackage."""


class XYScanError(Exception):
    """Base class for all library errors."""


class ShapeError(XYScanError, ValueError):
    pass


class DomainError(XYScanError, ValueError):
    """A value lies outside the domain of an operation (e.g. log of a negative)."""


class ContractError(XYScanError, ValueError):
    """A documented precondition of an API call was violated."""


class ConfigError(XYScanError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointError(XYScanError):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class KeyMismatchError(CheckpointError):
    def __init__(self, missing, extra):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(f"checkpoint key mismatch: missing={self.missing} extra={self.extra}")


class ImageError(XYScanError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class CorruptImageError(ImageError):
    pass


class MissingImageError(ImageError, FileNotFoundError):
    pass
