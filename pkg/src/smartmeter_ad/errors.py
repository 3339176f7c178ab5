"""Exception hierarchy shared by all modules."""


class ArtifactError(Exception):
    """Base class for every error raised deliberately by this package."""


class DimensionError(ArtifactError, ValueError):
    """Operand shapes do not agree."""


class DivergenceError(ArtifactError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class DegenerateChannelError(ArtifactError, ValueError):
    """A channel has zero variance and cannot be normalised."""


class DegenerateTruthError(ArtifactError, ValueError):
    """Ground truth contains a single class, so ROC is undefined."""


class SchemaError(ArtifactError, ValueError):
    """An input file violates its documented schema."""

    def __init__(self, path, line, field, message):
        self.path = str(path)
        self.line = line
        self.field = field
        super().__init__(f"{self.path}:{line}: field {field!r}: {message}")


class FormatVersionError(ArtifactError, ValueError):
    """A file declares a format version this build cannot read."""


class ChecksumError(ArtifactError, ValueError):
    """A stored checksum does not match the file content."""
