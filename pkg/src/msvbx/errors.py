"""Exception types raised across the package."""


class MsvbxError(Exception):
    """Base class for all package errors."""


class RecordingFormatError(MsvbxError):
    """Base class for recording-file deserialization failures."""


class BadMagicError(RecordingFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedPayloadError(RecordingFormatError):
    """File body is shorter than the header declares."""


class DimensionOverflowError(RecordingFormatError):
    """Header declares dimensions too large to be a real recording."""


class DegenerateInputError(MsvbxError):
    """Input is degenerate for the requested operation (e.g. zero vector)."""


class InfeasibleChunkError(MsvbxError):
    """A chunk admits no HMM state (active count outside the state space)."""


class DegenerateModelError(MsvbxError):
    """Inference removed every HMM state."""


class ConstraintViolationError(MsvbxError):
    """Two streams of one chunk ended up with the same speaker."""


class PairingError(MsvbxError):
    """Reference and hypothesis recording ids do not match up."""
