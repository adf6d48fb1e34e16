"""Exception hierarchy. Wire error codes are the class names."""


class MemdbError(Exception):
    """Base class for all engine errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class ValidationError(MemdbError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NotUnitNorm(ValidationError):
    pass


class EmptyKind(ValidationError):
    pass


class MissingHighView(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class ZeroPrefix(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class InvalidWindow(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class NoViews(ValidationError):
    pass


class NotFound(MemdbError):
    pass


class SourceNotFound(NotFound):
    pass


class EndpointMissing(NotFound):
    pass


class VertexNotFound(NotFound):
    pass


class EmbedderMissing(MemdbError):
    pass


class Untrained(MemdbError):
    pass


class StorageError(MemdbError):
    pass


class StorageFull(StorageError):
    pass


class ChecksumFailure(StorageError):
    pass


class CorruptInterior(ChecksumFailure):
    pass


class SegmentActive(StorageError):
    pass


class DataDirLocked(StorageError):
    pass


class AddressInUse(MemdbError):
    pass


class BadRequest(MemdbError):
    pass
