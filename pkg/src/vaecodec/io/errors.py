class CodecError(Exception):
    """Base class for data and format errors (CLI exit code 2)."""


class ImageReadError(CodecError):
    """An input image could not be opened or parsed."""


class UnsupportedPixelFormat(CodecError):
    """The image decodes, but not to 8-bit RGB."""


class ContainerError(CodecError):
    """A compressed file is malformed or truncated."""


class VersionMismatch(ContainerError):
    """A file was written by an incompatible format version."""


class ModelKeyError(CodecError):
    """The checkpoint digest does not match the model a file was coded with."""


class CheckpointError(CodecError):
    """A checkpoint file is malformed or fails its digest check."""
