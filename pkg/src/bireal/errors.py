"""Exception types, each tagged with a machine-parseable category for the CLI."""


class BiRealError(Exception):
    category = "internal"


class DimensionError(BiRealError):
    """Shape or length mismatch between operands."""

    category = "dimension"


class ConfigError(BiRealError):
    """Invalid or unknown configuration content."""

    category = "config"


class SpecError(BiRealError):
    """Inconsistent network specification (bad channel chain, unknown block kind)."""

    category = "spec"


class DataError(BiRealError):
    """Missing or malformed dataset files."""

    category = "data"


class TrainingError(BiRealError):
    """Training diverged (NaN loss) or was misconfigured at runtime."""

    category = "training"


class ChecksumError(BiRealError):
    """Checkpoint/model file failed CRC or magic validation."""

    category = "checksum"


class SingularityError(BiRealError):
    """Zero variance in a normalization layer with eps=0."""

    category = "numeric"


class DegenerateFilterError(BiRealError):
    """All-zero weight filter: binarization scale would be zero."""

    category = "degenerate"
