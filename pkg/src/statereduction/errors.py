"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class StateReductionError(Exception):
    """Base class for all errors raised by this package."""


class LayoutError(StateReductionError, ValueError):
    """Dimensions of operands, layouts or factor groups do not fit together."""


class InvalidStateError(StateReductionError, ValueError):
    """An operator fails the state-operator checks (Hermitian, positive, unit trace)."""


class ContractViolation(StateReductionError):
    """A precondition on an operator argument does not hold (e.g. non-unitary coupling)."""


class ProjectorAnnihilation(StateReductionError):
    """The (anti)symmetrization projector maps a state to zero."""

    def __init__(self, message: str, channel: int | None = None, weight: float = 0.0):
        super().__init__(message)
        self.channel = channel
        self.weight = weight


class DecompositionError(StateReductionError):
    """A prepared state is not contained in the span of the supplied sectors."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NoReduction(StateReductionError):
    """The reduction trigger is false; the unitary end state stands.

    The unitary end state is attached as ``end_state`` so callers can carry on
    with it.
    """

    def __init__(self, message: str, end_state):
        super().__init__(message)
        self.end_state = end_state


class DimensionBudgetExceeded(StateReductionError):
    pass


class NoDoubleWell(StateReductionError):
    def __init__(self, message: str, beta: float):
        super().__init__(message)
        self.beta = beta


class BoundaryError(StateReductionError):
    """Low-lying eigenfunctions reach the Dirichlet edges of the flux grid."""

    def __init__(self, message: str, edge_amplitude: float):
        super().__init__(message)
        self.edge_amplitude = edge_amplitude


class NumericalError(StateReductionError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(StateReductionError):
    """A configuration file does not parse or does not match the schema."""

    def __init__(self, message: str, key: str | None = None,
                 line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
        self.column = column

    def record(self) -> dict:
        return {"error": "config", "message": str(self), "key": self.key,
                "line": self.line, "column": self.column}
