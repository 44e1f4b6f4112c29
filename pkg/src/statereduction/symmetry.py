"""(Anti)symmetrization over groups of identical-particle tensor factors."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import tolerances
from .errors import ContractViolation, LayoutError, ProjectorAnnihilation
from .qstate import (OperatorMatrix, SpaceLayout, StateOperator, StateVector, as_array,
                     partial_trace, tensor)

MAX_GROUP_SIZE = 4


class Statistics(str, Enum):
    BOSONIC = "bosonic"
    FERMIONIC = "fermionic"


@dataclass(frozen=True)
class IdenticalGroup:
    factor_indices: tuple[int, ...]
    statistics: Statistics = Statistics.FERMIONIC

    def __post_init__(self):
        idx = tuple(int(i) for i in self.factor_indices)
        if len(idx) < 2:
            raise LayoutError("an identical-particle group needs at least 2 factors")
        if len(idx) > MAX_GROUP_SIZE:
            raise LayoutError(f"groups are limited to {MAX_GROUP_SIZE} factors, got {len(idx)}")
        if len(set(idx)) != len(idx):
            raise LayoutError(f"repeated factor in group {idx}")
        object.__setattr__(self, "factor_indices", idx)
        object.__setattr__(self, "statistics", Statistics(self.statistics))

    def validate(self, layout: SpaceLayout) -> None:
        dims = layout.factor_dims
        for i in self.factor_indices:
            if not 0 <= i < len(dims):
                raise LayoutError(f"group factor {i} outside layout with {len(dims)} factors")
        fd = {dims[i] for i in self.factor_indices}
        if len(fd) != 1:
            raise LayoutError(f"identical factors must share one dimension, got "
                              f"{[dims[i] for i in self.factor_indices]}")


@dataclass(frozen=True, eq=False)
class ProjectorBundle:
    projector: OperatorMatrix
    group: IdenticalGroup
    layout: SpaceLayout

    @property
    def matrix(self) -> np.ndarray:
        return self.projector.entries


def _sign(perm: tuple[int, ...]) -> int:
    sign, seen = 1, [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@lru_cache(maxsize=64)
def _permutation_indices(dims: tuple[int, ...], group: tuple[int, ...],
                         perm: tuple[int, ...]) -> np.ndarray:
    # Image index of every basis state when the contents of group[k] move to group[perm[k]].
    digits = np.array(np.unravel_index(np.arange(int(np.prod(dims))), dims))
    moved = digits.copy()
    for k, p in enumerate(perm):
        moved[group[p]] = digits[group[k]]
    out = np.ravel_multi_index(tuple(moved), dims)
    out.setflags(write=False)
    return out


def permutation_operator(layout: SpaceLayout, group: IdenticalGroup,
                         perm: tuple[int, ...]) -> OperatorMatrix:
    """Unitary that carries factor ``group[k]`` into slot ``group[perm[k]]``.

    Built directly as a 0/1 matrix from the permuted basis-index map.
    """
    group.validate(layout)
    target = _permutation_indices(layout.factor_dims, group.factor_indices, tuple(perm))
    m = np.zeros((layout.dim, layout.dim), dtype=complex)
    m[target, np.arange(layout.dim)] = 1.0
    return OperatorMatrix(m)


def group_permutations(group: IdenticalGroup):
    return list(itertools.permutations(range(len(group.factor_indices))))


def build_projector(layout: SpaceLayout, group: IdenticalGroup) -> ProjectorBundle:
    """(1/n!) sum over permutations of sgn(pi)^f P_pi for the factors of ``group``."""
    group.validate(layout)
    tol = tolerances.current()
    fermionic = group.statistics is Statistics.FERMIONIC
    d = layout.dim
    acc = np.zeros((d, d))
    cols = np.arange(d)
    perms = group_permutations(group)
    for perm in perms:
        target = _permutation_indices(layout.factor_dims, group.factor_indices, perm)
        acc[target, cols] += _sign(perm) if fermionic else 1
    p = acc.astype(complex) / math.factorial(len(group.factor_indices))
    idem = float(np.max(np.abs(p @ p - p)))
    herm = float(np.max(np.abs(p - p.conj().T)))
    if idem > tol.idempotence or herm > tol.hermiticity:
        raise LayoutError(f"projector construction failed: idempotence {idem:.2e}, "
                          f"hermiticity {herm:.2e}")
    return ProjectorBundle(OperatorMatrix(p), group, layout)


def projector_rank(bundle: ProjectorBundle) -> int:
    return int(np.sum(np.linalg.eigvalsh(bundle.matrix) > 0.5))


def sandwich(rho, bundle: ProjectorBundle | None) -> np.ndarray:
    """Pi rho Pi, unnormalized; ``None`` stands for the identity projector."""
    r = as_array(rho)
    if bundle is None:
        return r
    p = bundle.matrix
    if r.shape != p.shape:
        raise LayoutError(f"state of shape {r.shape} vs projector of shape {p.shape}")
    return p @ r @ p


def project_normalize(rho, bundle: ProjectorBundle | None) -> StateOperator:
    """nu Pi rho Pi with nu = 1/tr(Pi rho Pi)."""
    s = sandwich(rho, bundle)
    w = float(np.trace(s).real)
    if w < tolerances.current().annihilation:
        raise ProjectorAnnihilation(
            f"annihilated by projector: tr(Pi rho Pi) = {w:.3e} (no component in the "
            "(anti)symmetric sector)", weight=w)
    return StateOperator.unchecked(s / w)


def commutes_with_group(obs, bundle: ProjectorBundle, tol: float | None = None) -> bool:
    tol = tolerances.current().commutation if tol is None else tol
    o = as_array(obs)
    for perm in group_permutations(bundle.group):
        p = permutation_operator(bundle.layout, bundle.group, perm).entries
        if np.max(np.abs(p @ o - o @ p)) > tol:
            return False
    return True


def separation_overlap(psi: StateVector, env_state, bundle: ProjectorBundle) -> float:
    """Largest overlap <psi|rho_i|psi> of the system state with the single-particle
    marginals rho_i of the environment's identical factors.

    The system is factor 0 of the bundle's layout and ``env_state`` lives on
    the remaining factors.
    """
    layout = bundle.layout
    env_layout = SpaceLayout(layout.factor_dims[1:], layout.labels[1:])
    env_layout.check(env_state)
    a = as_array(psi)
    worst = 0.0
    for i in bundle.group.factor_indices:
        if i == 0:
            continue
        rho_i = partial_trace(env_state, env_layout, [i - 1]).entries
        worst = max(worst, float(np.real(np.vdot(a, rho_i @ a))))
    return worst


def descriptions_agree(psi: StateVector, env_state: StateOperator, bundle: ProjectorBundle,
                       obs) -> bool:
    """Compare <obs> in the product description and in the (anti)symmetrized one.

    ``psi`` is the system's single-particle state (factor 0, a member of the
    group) and ``env_state`` the state of all other factors. Returns True iff
    the two expectation values agree and the system is separated from the
    environment (overlap with every occupied environment mode below the
    separation threshold). Raises :class:`ProjectorAnnihilation` when the
    projector removes the product state entirely.
    """
    tol = tolerances.current()
    if 0 not in bundle.group.factor_indices:
        raise LayoutError("the system (factor 0) must belong to the identical group")
    if not commutes_with_group(obs, bundle):
        raise ContractViolation("observable does not commute with the group permutations")
    product = tensor(psi.projector(), StateOperator.unchecked(as_array(env_state)))
    bundle.layout.check(product)
    sym = project_normalize(product, bundle)
    o = as_array(obs)
    plain = complex(np.trace(o @ product.entries))
    symmetrized = complex(np.trace(o @ sym.entries))
    separated = separation_overlap(psi, env_state, bundle) < tol.separation_overlap
    return bool(separated and abs(plain - symmetrized) <= tol.agreement)
