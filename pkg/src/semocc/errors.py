"""Exception types shared across the package."""


class SemOccError(Exception):
    """Base class for all semocc errors."""


class GridRangeError(SemOccError, IndexError):
    """A voxel index or point falls outside the grid."""


class InvalidPoseError(SemOccError, ValueError):
    """A 4x4 matrix is not a valid rigid transform."""


class EmptyInputError(SemOccError, ValueError):
    """An operation received no data to work on."""


class InsufficientPointsError(SemOccError, ValueError):
    """Too few points for the requested operation."""


class SolverNotConvergedError(SemOccError, RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IncompatibleGridError(SemOccError, ValueError):
    """Two grids do not share the same lattice definition."""


class IncompatibleShapeError(SemOccError, ValueError):
    """Tensor shapes do not match the operation's contract."""


class UndefinedLossError(SemOccError, ValueError):
    """Loss is undefined, e.g. every voxel is ignored."""


class InvalidLossError(SemOccError, ValueError):
    """A loss term is non-finite."""


class UndefinedMetricError(SemOccError, ValueError):
    """Metric is undefined, e.g. no class present at all."""


class MalformedFileError(SemOccError, ValueError):
    """A binary file does not match its record layout."""


class PairingError(SemOccError, ValueError):
    """Paired inputs (points/labels/poses) disagree in count."""


class PoseParseError(SemOccError, ValueError):
    """A pose text file failed to parse."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class GridFormatError(SemOccError, ValueError):
    """A grid or volume file has a bad magic, version, or length."""


class InvalidInputError(SemOccError, ValueError):
    """A documented precondition was violated."""


class StageError(SemOccError, RuntimeError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
