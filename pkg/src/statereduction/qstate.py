"""Finite-dimensional Hilbert-space algebra.

Dense complex representations of state vectors, operators and state operators
(density matrices), together with tensor products, partial traces, unitary
evolution and the trace distance. All values are immutable: the wrapped arrays
are flagged read-only and every operation returns a new object.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce as _fold
from typing import Iterable, Sequence

import numpy as np

from . import tolerances
from .errors import ContractViolation, InvalidStateError, LayoutError

__all__ = [
    "StateVector", "OperatorMatrix", "StateOperator", "SpaceLayout",
    "tensor", "partial_trace", "evolve", "trace_distance",
    "random_state", "random_unitary", "random_density",
    "basis", "identity", "embed", "is_unitary", "unitarity_error", "purity",
    "as_array",
]


def _readonly(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=complex)
    if arr.ndim != ndim:
        raise LayoutError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def as_array(x) -> np.ndarray:
    """Underlying complex array of a wrapper, or ``x`` itself as an array."""
    if isinstance(x, StateVector):
        return x.amplitudes
    if isinstance(x, OperatorMatrix):
        return x.entries
    return np.asarray(x, dtype=complex)


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _readonly(self.amplitudes, 1)
        if amps.size == 0:
            raise LayoutError("state vector must have dim >= 1")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "StateVector":
        n = self.norm
        if n == 0.0:
            raise InvalidStateError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / n)

    def projector(self) -> "StateOperator":
        """|psi><psi| of the normalized vector."""
        psi = self.normalize().amplitudes
        return StateOperator.unchecked(np.outer(psi, psi.conj()))

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, as_array(other)))

    def __array__(self, dtype=None, copy=None):
        return self.amplitudes if dtype is None else self.amplitudes.astype(dtype)

    def __repr__(self) -> str:
        return f"StateVector(dim={self.dim})"


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    entries: np.ndarray

    def __post_init__(self):
        m = _readonly(self.entries, 2)
        if m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise LayoutError(f"operator must be square and non-empty, got shape {m.shape}")
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def dagger(self) -> "OperatorMatrix":
        return OperatorMatrix(self.entries.conj().T)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            return StateVector(self.entries @ other.amplitudes)
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.entries @ other.entries)
        return NotImplemented

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


class StateOperator(OperatorMatrix):
    """Hermitian, positive, unit-trace operator.

    The constructor validates all three properties against the active
    tolerance record. :meth:`unchecked` skips validation and is reserved for
    results that are valid by construction (Kronecker products of states,
    conjugation by a verified unitary, partial traces).
    """

    def __post_init__(self):
        super().__post_init__()
        self.check()

    @classmethod
    def unchecked(cls, entries) -> "StateOperator":
        obj = object.__new__(cls)
        m = np.array(entries, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(obj, "entries", m)
        return obj

    def check(self) -> "StateOperator":
        tol = tolerances.current()
        m = self.entries
        herm = float(np.max(np.abs(m - m.conj().T)))
        if herm > tol.hermiticity:
            raise InvalidStateError(f"not Hermitian: max |A - A^H| = {herm:.3e}")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > tol.trace:
            raise InvalidStateError(f"trace {tr:.15g} differs from 1")
        lo = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
        if lo < -tol.positivity:
            raise InvalidStateError(f"negative eigenvalue {lo:.3e}")
        return self

    def purity(self) -> float:
        return purity(self)

    def expectation(self, obs) -> complex:
        return complex(np.trace(as_array(obs) @ self.entries))


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered tensor factors of a composite space; factor 0 is the slowest index."""

    factor_dims: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims or any(d < 1 for d in dims):
            raise LayoutError(f"factor dimensions must be positive, got {self.factor_dims}")
        labels = tuple(self.labels) or tuple(f"f{i}" for i in range(len(dims)))
        if len(labels) != len(dims):
            raise LayoutError("one label per factor required")
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate factor labels {labels}")
        object.__setattr__(self, "factor_dims", dims)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return int(np.prod(self.factor_dims))

    @property
    def n_factors(self) -> int:
        return len(self.factor_dims)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"no factor labelled {label!r} in {self.labels}") from None

    def resolve(self, factors: Iterable[int | str]) -> list[int]:
        out = []
        for f in factors:
            i = self.index(f) if isinstance(f, str) else int(f)
            if not 0 <= i < self.n_factors:
                raise LayoutError(f"factor index {i} out of range for {self.n_factors} factors")
            out.append(i)
        return out

    def check(self, x) -> None:
        if as_array(x).shape[0] != self.dim:
            raise LayoutError(f"operand dimension {as_array(x).shape[0]} does not match "
                              f"layout dimension {self.dim} {self.factor_dims}")


def tensor(*factors):
    """Kronecker product, left operand slowest.

    All operands must be of one kind: state vectors give a state vector, state
    operators a state operator, any other operator mix an ``OperatorMatrix``.
    """
    if not factors:
        raise LayoutError("tensor needs at least one operand")
    if all(isinstance(f, StateVector) for f in factors):
        return StateVector(_fold(np.kron, [f.amplitudes for f in factors]))
    if all(isinstance(f, OperatorMatrix) for f in factors):
        out = _fold(np.kron, [f.entries for f in factors])
        if all(isinstance(f, StateOperator) for f in factors):
            return StateOperator.unchecked(out)
        return OperatorMatrix(out)
    raise TypeError("tensor operands must all be state vectors or all be operators")


def partial_trace(rho, layout: SpaceLayout, keep: Iterable[int | str]) -> StateOperator:
    """Reduced state on the ``keep`` factors (returned in layout order)."""
    layout.check(rho)
    kept = sorted(set(layout.resolve(keep)))
    if not kept:
        raise LayoutError("keep must name at least one factor")
    dims = layout.factor_dims
    n = len(dims)
    traced = [i for i in range(n) if i not in kept]
    t = as_array(rho).reshape(dims + dims)
    perm = kept + traced + [n + i for i in kept] + [n + i for i in traced]
    dk = int(np.prod([dims[i] for i in kept]))
    dt = int(np.prod([dims[i] for i in traced])) if traced else 1
    t = t.transpose(perm).reshape(dk, dt, dk, dt)
    return StateOperator.unchecked(np.einsum("ijkj->ik", t))


def unitarity_error(u) -> float:
    m = as_array(u)
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def is_unitary(u, tol: float | None = None) -> bool:
    tol = tolerances.current().unitarity if tol is None else tol
    return unitarity_error(u) <= tol


def evolve(u, rho) -> StateOperator:
    """U rho U^dagger for a unitary ``u``; non-unitary input is a contract violation."""
    um, r = as_array(u), as_array(rho)
    if um.shape != r.shape:
        raise LayoutError(f"operator shapes differ: {um.shape} vs {r.shape}")
    err = unitarity_error(um)
    if err > tolerances.current().unitarity:
        raise ContractViolation(f"evolution operator is not unitary: max|U^H U - I| = {err:.3e}")
    return StateOperator.unchecked(um @ r @ um.conj().T)


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b``."""
    am, bm = as_array(a), as_array(b)
    if am.shape != bm.shape:
        raise LayoutError(f"trace_distance of operators with shapes {am.shape} and {bm.shape}")
    d = am - bm
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def purity(rho) -> float:
    m = as_array(rho)
    return float(np.real(np.vdot(m, m)))


def _gaussian(dim_shape, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(dim_shape) + 1j * rng.standard_normal(dim_shape)) / np.sqrt(2)


def random_state(dim: int, seed) -> StateVector:
    if dim < 1:
        raise LayoutError("dim must be >= 1")
    return StateVector(_gaussian(dim, seed)).normalize()


def random_unitary(dim: int, seed) -> OperatorMatrix:
    """Haar-distributed unitary from the QR decomposition of a complex Ginibre matrix."""
    if dim < 1:
        raise LayoutError("dim must be >= 1")
    q, r = np.linalg.qr(_gaussian((dim, dim), seed))
    d = np.diag(r)
    q = q * (d / np.abs(d))
    # one Gram-Schmidt pass to push the unitarity error to roundoff
    q, _ = np.linalg.qr(q)
    return OperatorMatrix(q)


def random_density(dim: int, seed, rank: int | None = None) -> StateOperator:
    rank = dim if rank is None else rank
    g = _gaussian((dim, rank), seed)
    m = g @ g.conj().T
    return StateOperator(m / np.trace(m).real)


def basis(dim: int, index: int) -> StateVector:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return StateVector(v)


def identity(dim: int) -> OperatorMatrix:
    return OperatorMatrix(np.eye(dim, dtype=complex))


def embed(op, layout: SpaceLayout, factors: int | str | Sequence[int | str]) -> OperatorMatrix:
    """Lift an operator acting on ``factors`` (contiguous in the given order) to the full space.

    The operand's index ordering follows the order in which ``factors`` are
    listed; they need not be adjacent in the layout.
    """
    if isinstance(factors, (int, str)):
        factors = [factors]
    idx = layout.resolve(factors)
    if len(set(idx)) != len(idx):
        raise LayoutError("repeated factor in embed")
    dims = layout.factor_dims
    m = as_array(op)
    sub = int(np.prod([dims[i] for i in idx]))
    if m.shape != (sub, sub):
        raise LayoutError(f"operator of shape {m.shape} does not act on factors {idx} of dims "
                          f"{[dims[i] for i in idx]}")
    rest = [i for i in range(len(dims)) if i not in idx]
    drest = int(np.prod([dims[i] for i in rest])) if rest else 1
    full = np.kron(m, np.eye(drest))
    # full currently has factor order idx + rest; permute back to layout order
    order = idx + rest
    n = len(dims)
    shaped = full.reshape([dims[i] for i in order] * 2)
    inv = [order.index(i) for i in range(n)]
    shaped = shaped.transpose(inv + [n + i for i in inv])
    return OperatorMatrix(shaped.reshape(layout.dim, layout.dim))
