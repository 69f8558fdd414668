"""Exception hierarchy shared by every stage of the pipeline."""


class AvlbpError(Exception):
    """Base class for all errors raised by this package."""


class ImageFormatError(AvlbpError):
    """Input file could not be decoded as a supported raster or mask."""


class DimensionError(AvlbpError, ValueError):
    """Arrays that must be paired have incompatible shapes."""


class SchemaError(AvlbpError):
    """Feature vectors and a model or dataset disagree on their schema."""


class ModelFileError(AvlbpError):
    """A serialized model is truncated, corrupted or of an unknown version."""


class EmptyDataError(AvlbpError, ValueError):
    """An operation received no usable samples, pixels or segments."""
