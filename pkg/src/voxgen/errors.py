"""Exception hierarchy shared across voxgen."""


class VoxgenError(Exception):
    pass


class ShapeMismatch(VoxgenError, ValueError):
    pass


class DomainError(VoxgenError, ValueError):
    pass


class InvalidStride(VoxgenError, ValueError):
    pass


class InvalidAxis(VoxgenError, ValueError):
    pass


class NotScalar(VoxgenError, ValueError):
    pass


class TapeConsumed(VoxgenError, RuntimeError):
    pass


class NonDeterministicFunction(VoxgenError, RuntimeError):
    pass


class MissingGradient(VoxgenError, RuntimeError):
    pass


class ContextMismatch(VoxgenError, ValueError):
    pass


class InvalidCamera(VoxgenError, ValueError):
    pass


class NonPositiveDisplacement(VoxgenError, ValueError):
    pass


class DegenerateCamera(VoxgenError, ValueError):
    pass


class ConfigError(VoxgenError, ValueError):
    pass


class CheckpointCorrupt(VoxgenError, RuntimeError):
    pass


class DataError(VoxgenError, ValueError):
    """Base for malformed input data files."""


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class LabelCountMismatch(DataError):
    pass
