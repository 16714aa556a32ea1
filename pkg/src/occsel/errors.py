"""Exception types shared across the package."""


class OccSelError(Exception):
    """Base class for all occsel errors."""


class DimensionMismatch(OccSelError):
    """Inputs disagree on the number of classes or feature length."""


class EmptyGrid(OccSelError):
    """A grid has no visible voxels; class composition is undefined."""


class InvalidRow(OccSelError):
    """A per-voxel probability row is not normalized within tolerance."""


class EmptySelection(OccSelError):
    """Intra-set diversity queried against an empty selection."""


class BudgetExceedsPool(OccSelError):
    """Requested batch size is larger than the candidate pool."""


class MissingSummary(OccSelError):
    """A candidate id has no summary record."""

    def __init__(self, sample_id):
        super().__init__(f"no summary for sample id {sample_id!r}")
        self.sample_id = sample_id


class EmptyPool(OccSelError):
    """An index was requested over zero distributions."""


class EmptyIndex(OccSelError):
    """A query was issued against an index with no entries."""


class DuplicateId(OccSelError):
    """An id was inserted twice into an index or manifest."""


class InvalidSpec(OccSelError):
    """A simulation pool spec violates its own constraints."""


class GridFileError(OccSelError):
    """Base class for binary grid-file format violations."""


class BadMagic(GridFileError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(GridFileError):
    """File declares a format version this reader does not handle."""


class TruncatedPayload(GridFileError):
    """Probability payload is shorter (or longer) than the header promises."""


class RowNotNormalized(GridFileError):
    """A stored probability row does not sum to one within tolerance."""

    def __init__(self, row_index, row_sum):
        super().__init__(f"row {row_index} sums to {row_sum!r}, expected 1")
        self.row_index = row_index
        self.row_sum = row_sum


class RecordFormatError(OccSelError):
    """A line-delimited record file failed to parse or validate."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class StateCorrupt(OccSelError):
    """A persisted cycle state violates its structural invariants."""
