"""
TVNet - Exception Types
"""


class TVNetError(Exception):
    """Base class for every error raised by the toolkit"""


class ShapeError(TVNetError, ValueError):
    """Raised when tensor or array shapes do not fit an operation"""


class GraphError(TVNetError, RuntimeError):
    """Raised when the recorded compute graph is used incorrectly"""


class NonFiniteError(TVNetError, FloatingPointError):
    """Raised when NaN or Inf shows up in values or gradients"""


class AnnotationFormatError(TVNetError, ValueError):
    """Raised for malformed annotation or prediction files"""

    def __init__(self, path: str, context: str, message: str):
        self.path = path
        self.context = context
        super().__init__(f"{path}: {context}: {message}")


class FeatureFormatError(TVNetError, ValueError):
    """Raised for malformed or mismatching feature files"""


class CheckpointError(TVNetError, ValueError):
    """Raised for unreadable checkpoints or checkpoints that do not fit a model"""


class ConfigError(TVNetError, ValueError):
    """Raised for invalid configuration or missing pipeline prerequisites"""


class SynthesisError(TVNetError, ValueError):
    """Raised when the synthetic generator cannot place the requested actions"""
