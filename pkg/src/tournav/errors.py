"""Exception hierarchy shared across the package."""


class TournavError(Exception):
    """Base class for all package errors."""


class ValidationError(TournavError):
    """Input data violates a documented invariant."""


class FormatError(ValidationError):
    """A file on disk is malformed or carries an unsupported version."""


class NoPathError(TournavError):
    """Goal vertex unreachable from the start vertex."""

    def __init__(self, start: int, goal: int, reachable_count: int):
        super().__init__(
            f"no path from vertex {start} to vertex {goal} "
            f"({reachable_count} vertices reachable from start)"
        )
        self.start = start
        self.goal = goal
        self.reachable_count = reachable_count


class UnsupportedInstructionError(ValidationError):
    """The operation requires an instruction modality that is absent."""


class TransportError(TournavError):
    """A remote model endpoint could not be reached or timed out."""
