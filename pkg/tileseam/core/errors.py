class TileseamError(Exception):
    """
    Base class of all errors raised by tileseam
    """


class ShapeError(TileseamError, ValueError):
    """
    Tensor extents or channel counts do not fit together
    """


class NonFiniteError(TileseamError, ArithmeticError):
    """
    A tensor produced by a public operation contains NaN or Inf
    """


class ConfigError(TileseamError, ValueError):
    """
    A configuration object violates its invariants
    """


class PlanError(ConfigError):
    """
    A tile grid or probe geometry cannot be constructed
    """


class StaleCacheError(TileseamError, RuntimeError):
    """
    backward was called without a matching recorded forward pass
    """


class TrainingDivergedError(TileseamError, ArithmeticError):
    """
    The training loss became non-finite
    """


class SynthesisError(TileseamError, RuntimeError):
    """
    The synthetic volume generator could not satisfy its SynthSpec
    """


class DataFormatError(TileseamError, IOError):
    """
    A file on disk does not have the expected layout
    """


class NpyFormatError(DataFormatError):
    """
    Not a readable NPY v1.0 file
    """


class MagicMismatchError(NpyFormatError):
    """
    The file does not start with the NPY magic string
    """


class FortranOrderError(NpyFormatError):
    """
    Column-major payloads are rejected
    """


class UnsupportedDtypeError(NpyFormatError):
    """
    Only little-endian float32 and float64 payloads are accepted
    """


class TruncatedPayloadError(NpyFormatError):
    """
    The payload is shorter than the header announces
    """


class CheckpointError(DataFormatError):
    """
    A checkpoint directory is incomplete or inconsistent with its manifest
    """
