"""Central tolerance record.

Every numerical threshold used by the package lives in :class:`Tolerances`.
Library code reads the active record through :func:`current`; the CLI and the
tests swap it with :func:`using`.
"""

from __future__ import annotations

import contextlib
import dataclasses
from contextvars import ContextVar
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # qstate
    normalization: float = 1e-12
    hermiticity: float = 1e-12
    positivity: float = 1e-10
    trace: float = 1e-12
    unitarity: float = 1e-10
    # symmetry
    idempotence: float = 1e-10
    commutation: float = 1e-10
    annihilation: float = 1e-14
    separation_overlap: float = 1e-8
    agreement: float = 1e-8
    # reduction
    orthogonality: float = 1e-10
    weight_sum: float = 1e-10
    reconstruction: float = 1e-10
    channel_drop: float = 1e-12
    signal_leakage: float = 1e-6
    covariance: float = 1e-8
    # squid
    eigen_residual: float = 1e-8
    orthonormality: float = 1e-8
    edge_amplitude: float = 1e-6
    stationary_derivative: float = 1e-12
    symmetric_depth: float = 1e-10

    def replace(self, **changes: float) -> "Tolerances":
        unknown = set(changes) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise KeyError(f"unknown tolerance key(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **{k: float(v) for k, v in changes.items()})

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


DEFAULT = Tolerances()

_active: ContextVar[Tolerances] = ContextVar("statereduction_tolerances", default=DEFAULT)


def current() -> Tolerances:
    return _active.get()


@contextlib.contextmanager
def using(tol: Tolerances):
    token = _active.set(tol)
    try:
        yield tol
    finally:
        _active.reset(token)
