class AdapterError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class ModelUnavailable(AdapterError):
    """A model runtime or its weights are not installed."""


class NoDetection(AdapterError):
    """A prompt matched nothing in the first frame; recorded, not fatal."""


class BackendFailure(AdapterError):
    """VOS propagation failed at a specific frame."""

    def __init__(self, frame: int, message: str):
        self.frame = frame
        super().__init__(f"frame {frame}: {message}")


class DecodeError(AdapterError):
    """Video or image input cannot be decoded."""


class ConsistencyError(AdapterError):
    """Output directory state conflicts with the requested job."""
