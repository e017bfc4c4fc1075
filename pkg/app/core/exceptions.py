class JustDenseError(Exception):
    """Base class for every error raised by the lab"""


class ShapeError(JustDenseError, ValueError):
    """Operands do not conform"""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class ConvergenceError(JustDenseError):
    """An iterative numerical routine did not converge"""


class GraphError(JustDenseError):
    """Misuse of the gradient tape (non-scalar loss, foreign nodes)"""


class DataFormatError(JustDenseError, ValueError):
    """Malformed input data; carries the offending line number when known"""

    def __init__(self, message: str, path=None, line: int = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class UnstableProcessError(JustDenseError, ValueError):
    """AR coefficients with a characteristic root outside the unit circle"""


class NonFiniteLossError(JustDenseError, FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"Loss became non-finite ({value}) at step {step}")
        self.step = step
        self.value = value


class UndefinedMetricError(JustDenseError, ValueError):
    """Metric denominator vanished"""


class UnknownMixerError(JustDenseError, ValueError):
    """Mixer family tag not recognised for the requested operation"""


class ExportError(JustDenseError, OSError):
    """Writing an artifact (heatmap, report, checkpoint) failed; carries the path"""

    def __init__(self, message: str, path=None):
        super().__init__(f"{path}: {message}" if path is not None else message)
        self.path = path
