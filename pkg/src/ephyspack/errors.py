"""Exception hierarchy shared by the container, model, query, and ingest layers."""

from __future__ import annotations


class EphysPackError(Exception):
    """Base class for every error raised by this package."""


# --- container-level -------------------------------------------------------

class ContainerError(EphysPackError):
    pass


class PathExists(ContainerError):
    pass


class IoFailure(ContainerError):
    pass


class ContainerLocked(ContainerError):
    """A writable handle already holds the advisory lock for this file."""


class BadMagic(ContainerError):
    pass


class UnsupportedVersion(ContainerError):
    pass


class CorruptFooter(ContainerError):
    """Superblock or footer failed a structural or checksum test."""


class TruncatedFile(ContainerError):
    pass


class ChunkChecksumMismatch(ContainerError):
    """A chunk record does not match its recorded checksum or index entry.

    ``coords`` identifies the offending chunk.
    """

    def __init__(self, message: str, dataset_id: int, coords: tuple[int, ...]):
        super().__init__(message)
        self.dataset_id = dataset_id
        self.coords = coords


class ReadOnlyHandle(ContainerError):
    pass


class NoSuchObject(ContainerError):
    pass


class NotAGroup(ContainerError):
    pass


class NotADataset(ContainerError):
    pass


class DuplicateName(ContainerError):
    pass


class InvalidName(ContainerError):
    pass


class RankMismatch(ContainerError):
    pass


class RankTooHigh(ContainerError):
    pass


class ZeroChunkExtent(ContainerError):
    pass


class OutOfBounds(ContainerError):
    pass


class LengthMismatch(ContainerError):
    pass


class DtypeMismatch(ContainerError):
    pass


class AttributeBudgetExceeded(ContainerError):
    pass


class NoSuchKey(ContainerError):
    pass


# --- model-level -----------------------------------------------------------

class ModelError(EphysPackError):
    pass


class SchemaViolation(ModelError):
    """Stored layout of an entity does not satisfy its schema.

    Carries the entity path and the stable rule code that failed, matching
    the codes reported by :func:`ephyspack.validate.validate_file`.
    """

    def __init__(self, path: str, rule_code: str, message: str):
        super().__init__(f"{path}: [{rule_code}] {message}")
        self.path = path
        self.rule_code = rule_code


class UuidMismatch(ModelError):
    pass


class DuplicateSourceId(ModelError):
    pass


class UnknownParent(ModelError):
    pass


class CycleDetected(ModelError):
    pass


class RoiGeometryOnNonRoi(ModelError):
    pass


class NonMonotonicTimestamps(ModelError):
    pass


class SourceCountMismatch(ModelError):
    pass


class MissingUnit(ModelError):
    pass


class NonPositiveRate(ModelError):
    pass


class IndexOutOfRange(ModelError):
    pass


class EventTimeOutOfWindow(ModelError):
    pass


class BadOffsets(ModelError):
    pass


class ProbRowNotNormalized(ModelError):
    def __init__(self, message: str, event_index: int):
        super().__init__(message)
        self.event_index = event_index


class UnknownUnitSource(ModelError):
    pass


class DuplicatePropertySetName(ModelError):
    pass


class NoWaveforms(ModelError):
    pass


class DimSemanticsMismatch(ModelError):
    pass


class NoTimeDimension(ModelError):
    pass


class FrameTimeCountMismatch(ModelError):
    pass


class NonMonotonicFrameTimes(ModelError):
    pass


class PropertyLengthMismatch(ModelError):
    pass


class EventOutsideMonitorWindow(ModelError):
    pass


class MissingDescription(ModelError):
    pass


class HeadingCountMismatch(ModelError):
    pass


class DanglingReference(ModelError):
    pass


class DerivationCycle(ModelError):
    pass


class EmptyAgents(ModelError):
    pass


class DuplicateGroupId(ModelError):
    pass


# --- query-level -----------------------------------------------------------

class QueryError(EphysPackError):
    pass


class NoSuchEntity(QueryError):
    pass


class NoSuchSource(QueryError):
    pass


class NoSuchGroup(QueryError):
    pass


# --- ingest-level ----------------------------------------------------------

class IngestError(EphysPackError):
    pass


class ManifestError(IngestError):
    pass


class ParseError(IngestError):
    def __init__(self, message: str, file: str, line: int, column: int | None = None):
        loc = f"{file}:{line}" if column is None else f"{file}:{line}:{column}"
        super().__init__(f"{loc}: {message}")
        self.file = file
        self.line = line
        self.column = column


class UnknownMutation(IngestError):
    pass
