"""Exception hierarchy shared by every cNRI module."""


class CNRIError(Exception):
    """Base class for all package errors."""


class DimensionError(CNRIError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(CNRIError, ValueError):
    """An input violates a documented precondition."""


class SimulationFault(CNRIError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class TrainingFault(CNRIError, RuntimeError):
    """Non-finite loss or gradient during optimization."""


class DecodeFault(CNRIError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class FormatError(CNRIError, ValueError):
    """Malformed on-disk artifact."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")
        self.offset = offset


class VersionError(FormatError):
    pass


class IntegrityError(FormatError):
    """Stored checksum does not match the payload."""


class RegimeMismatchError(CNRIError, ValueError):
    pass


class MissingArtifactError(CNRIError, FileNotFoundError):
    pass
