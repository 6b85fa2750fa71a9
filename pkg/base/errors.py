"""
Exception hierarchy shared by every module.

The CLI maps ConfigError to exit code 2 and InvariantViolation to exit code 3.
"""


class HarError(Exception):
    """Root of all toolkit errors"""


class ConfigError(HarError, ValueError):
    """Invalid or inconsistent configuration"""


class TransformConfigError(ConfigError):
    """TransformConfig infeasible for the window length"""


class SignalError(HarError, ValueError):
    """Acceleration data violates a SignalWindow / RawRecording invariant"""


class StoreFormatError(HarError, ValueError):
    """Window store or checkpoint file is malformed"""


class IngestError(HarError, ValueError):
    """Malformed CSV input"""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.line = line


class ShapeError(HarError, ValueError):
    """Input batch does not match the network configuration"""


class LabelError(HarError, ValueError):
    """Labels out of range or not enough classes"""


class SamplingError(HarError, ValueError):
    """Nothing to sample from"""


class NonFiniteGradientError(HarError, RuntimeError):
    """Optimizer step rejected because gradients contain NaN/Inf"""

    def __init__(self, offenders: dict[str, int]):
        details = ", ".join(f"{name} ({count} non-finite)" for name, count in offenders.items())
        super().__init__(f"Adam step rejected, non-finite gradients in: {details}")
        self.offenders = offenders


class CanonizationError(HarError, RuntimeError):
    """LRP met a layer it cannot canonize"""


class UntrainedModelError(HarError, RuntimeError):
    """Model accuracy at chance level where a trained model is required"""


class InvariantViolation(HarError, RuntimeError):
    """A hard runtime invariant failed"""


def require(condition: bool, message: str):
    """Raise InvariantViolation unless condition holds"""
    if not condition:
        raise InvariantViolation(message)
