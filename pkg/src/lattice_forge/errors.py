"""Exception types raised across lattice_forge."""


class LatticeForgeError(Exception):
    """Base class for all package errors."""


class DegenerateInput(LatticeForgeError):
    """Point set is coplanar, has duplicates, or a predicate is indeterminate."""


class GenerationFailed(LatticeForgeError):
    """Lattice generation exhausted its retry budget."""


class DimensionMismatch(LatticeForgeError, ValueError):
    pass


class SingularSystem(LatticeForgeError):
    """The free-DOF stiffness block is singular (mechanism)."""


class ZeroArea(LatticeForgeError):
    pass


class DegenerateTarget(LatticeForgeError, ValueError):
    pass


class NonFiniteLoss(LatticeForgeError):
    pass


class IsolatedNode(LatticeForgeError):
    pass


class SchemaMismatch(LatticeForgeError):
    pass


class CorruptRecord(LatticeForgeError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyRange(LatticeForgeError):
    def __init__(self, message: str, nearest: tuple[float, float] | None = None):
        super().__init__(message)
        self.nearest = nearest
