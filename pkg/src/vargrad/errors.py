"""Exception hierarchy shared by all vargrad modules."""


class VarGradError(Exception):
    pass


class ConfigurationError(VarGradError, ValueError):
    """Bad shapes, missing fields or out-of-range hyperparameters."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class DomainError(VarGradError, ValueError):
    """Input outside the mathematical domain of a function."""


class DataError(VarGradError, ValueError):
    """Non-finite or otherwise unusable numeric data."""


class EncodingError(VarGradError, ValueError):
    """A value cannot be represented in the wire format."""


class ProtocolError(VarGradError, ValueError):
    """Malformed or inconsistent wire data."""


class TraceFormatError(ProtocolError):
    pass


class CommunicationError(VarGradError, RuntimeError):
    def __init__(self, message, worker_id=None):
        if worker_id is not None:
            message = f"worker {worker_id}: {message}"
        super().__init__(message)
        self.worker_id = worker_id


class DivergenceError(VarGradError, RuntimeError):
    pass
