"""Exception types shared across the package."""


class BidsforgeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BidsforgeError):
    """Bad configuration: missing executable, malformed rule file, bad flag."""


class FormatError(BidsforgeError):
    """Unsupported input format (archive extension, voxel datatype, ...)."""


class UnsafeArchiveError(BidsforgeError):
    """Archive entry would escape the extraction root."""

    def __init__(self, entry: str):
        self.entry = entry
        super().__init__(f"archive entry escapes extraction root: {entry!r}")


class ExtractionError(BidsforgeError):
    """Archive could not be extracted."""


class SidecarParseError(BidsforgeError):
    """Sidecar JSON is not well formed."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class SidecarFieldError(BidsforgeError):
    """A known sidecar field has the wrong type or an invalid value."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"sidecar field {field!r}: {message}")


class DocumentIntegrityError(BidsforgeError):
    """Document violates a referential invariant."""

    def __init__(self, offenders: list[str]):
        self.offenders = offenders
        super().__init__("document integrity violated: " + "; ".join(offenders))


class EntityError(BidsforgeError):
    """An entity key/value failed validation; carries the validation item."""

    def __init__(self, item):
        self.item = item
        super().__init__(item.message)


class EventsParseError(BidsforgeError):
    """A task-events timing file could not be parsed."""


class MappingError(BidsforgeError):
    """Events column mapping references a column absent from the table."""


class EmissionRefusedError(BidsforgeError):
    """Emission was refused; carries the blocking validation items."""

    def __init__(self, items, message: str = "emission refused"):
        self.items = list(items)
        details = "; ".join(i.message for i in self.items)
        super().__init__(f"{message}: {details}" if details else message)
