"""Screening dynamics and its reduction to a proper mixture.

A prepared system state is split into orthogonal channels, the composite of
system and body is (anti)symmetrized and evolved, the evolved state is expanded
as a quadratic form in the channel coefficients, and -- when the alternatives
carry distinct detector signals and at least one channel loses its separation
status by absorption -- the quadratic form is replaced by a proper mixture of
its diagonal terms with Born weights.

Conventions: factor 0 of a scenario's layout is the registered system; the
body (screen, detector, other particles) occupies the remaining factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tolerances
from .errors import (ContractViolation, DecompositionError, InvalidStateError, LayoutError,
                     NoReduction, ProjectorAnnihilation)
from .qstate import (OperatorMatrix, SpaceLayout, StateOperator, StateVector, as_array,
                     evolve, partial_trace, purity, tensor, trace_distance, unitarity_error)
from .symmetry import ProjectorBundle, project_normalize, sandwich


@dataclass(frozen=True, eq=False)
class ChannelDecomposition:
    channels: tuple[StateVector, ...]
    coeffs: tuple[complex, ...]
    absorbed_flags: tuple[bool, ...]
    sector_ids: tuple[int, ...] = ()

    def __post_init__(self):
        tol = tolerances.current()
        chans = tuple(self.channels)
        coeffs = tuple(complex(c) for c in self.coeffs)
        flags = tuple(bool(f) for f in self.absorbed_flags)
        ids = tuple(self.sector_ids) or tuple(range(len(chans)))
        if not chans or not (len(chans) == len(coeffs) == len(flags) == len(ids)):
            raise LayoutError("channels, coeffs, absorbed_flags and sector_ids must align")
        if len({c.dim for c in chans}) != 1:
            raise LayoutError("channels live in different spaces")
        gram = np.array([[np.vdot(a.amplitudes, b.amplitudes) for b in chans] for a in chans])
        off = gram - np.diag(np.diag(gram))
        if np.any(np.abs(np.diag(gram).real - 1.0) > 2 * tol.normalization):
            raise InvalidStateError("channel states must be normalized")
        if off.size and np.max(np.abs(off)) > tol.orthogonality:
            raise InvalidStateError(f"channels not orthogonal: max overlap {np.max(np.abs(off)):.2e}")
        total = sum(abs(c) ** 2 for c in coeffs)
        if abs(total - 1.0) > tol.weight_sum:
            raise InvalidStateError(f"sum |c_k|^2 = {total!r} differs from 1")
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "absorbed_flags", flags)
        object.__setattr__(self, "sector_ids", ids)

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def weights(self) -> np.ndarray:
        return np.abs(np.array(self.coeffs)) ** 2

    def state(self) -> StateVector:
        return StateVector(sum(c * ch.amplitudes for c, ch in zip(self.coeffs, self.channels)))


def channel_decompose(psi: StateVector, sector_projectors: Sequence,
                      absorbed: Sequence[bool] | None = None) -> ChannelDecomposition:
    """Split ``psi`` along orthogonal sector projectors Q_k.

    c_k = ||Q_k psi||, psi_k = Q_k psi / c_k. Channels with c_k at or below
    the drop threshold are discarded; ``sector_ids`` records which sector each
    retained channel came from.
    """
    tol = tolerances.current()
    a = as_array(psi)
    qs = [as_array(q) for q in sector_projectors]
    absorbed = [False] * len(qs) if absorbed is None else list(absorbed)
    if len(absorbed) != len(qs):
        raise LayoutError("one absorbed flag per sector required")
    if not qs:
        raise DecompositionError("no sectors supplied", residual=float(np.linalg.norm(a)))
    for q in qs:
        if q.shape != (a.size, a.size):
            raise LayoutError(f"sector projector shape {q.shape} vs state dim {a.size}")
    for i, q in enumerate(qs):
        if np.max(np.abs(q @ q - q)) > tol.idempotence:
            raise ContractViolation(f"sector {i} is not a projector")
        for j in range(i):
            if np.max(np.abs(q @ qs[j])) > tol.orthogonality:
                raise ContractViolation(f"sectors {j} and {i} are not orthogonal")
    parts = [q @ a for q in qs]
    residual = float(np.linalg.norm(sum(parts) - a))
    if residual > tol.reconstruction:
        raise DecompositionError(f"state not contained in the span of the sectors "
                                 f"(residual norm {residual:.3e})", residual=residual)
    chans, coeffs, flags, ids = [], [], [], []
    for k, part in enumerate(parts):
        c = float(np.linalg.norm(part))
        if c > tol.channel_drop:
            chans.append(StateVector(part / c))
            coeffs.append(c)
            flags.append(absorbed[k])
            ids.append(k)
    # renormalize away roundoff so the weight invariant holds exactly
    s = np.sqrt(sum(c * c for c in coeffs))
    return ChannelDecomposition(tuple(chans), tuple(c / s for c in coeffs), tuple(flags),
                                tuple(ids))


@dataclass(frozen=True, eq=False)
class ProperMixture:
    """Ensemble in which each individual system is in exactly one component state."""

    components: tuple[tuple[float, StateOperator], ...]
    labels: tuple = ()

    def __post_init__(self):
        comps = tuple((float(w), s) for w, s in self.components)
        if not comps:
            raise InvalidStateError("a proper mixture needs at least one component")
        ws = np.array([w for w, _ in comps])
        if np.any(ws < 0):
            raise InvalidStateError("negative mixture weight")
        if abs(ws.sum() - 1.0) > tolerances.current().weight_sum:
            raise InvalidStateError(f"mixture weights sum to {ws.sum()!r}")
        if any(not isinstance(s, StateOperator) for _, s in comps):
            raise InvalidStateError("mixture components must be StateOperators")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "labels", tuple(self.labels) or tuple(range(len(comps))))

    def __len__(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def states(self) -> list[StateOperator]:
        return [s for _, s in self.components]

    def average(self) -> StateOperator:
        """Ensemble-average state operator (loses the proper-mixture semantics)."""
        return StateOperator.unchecked(sum(w * s.entries for w, s in self.components))


@dataclass(frozen=True, eq=False)
class ScreeningScenario:
    layout: SpaceLayout
    decomposition: ChannelDecomposition
    body_state: StateOperator
    coupling: OperatorMatrix
    projector: ProjectorBundle | None
    thr_free_evolution: OperatorMatrix
    signal_projectors: tuple[OperatorMatrix, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lay = self.layout
        d0 = lay.factor_dims[0]
        if self.decomposition.channels[0].dim != d0:
            raise LayoutError(f"channels have dim {self.decomposition.channels[0].dim}, "
                              f"system factor has dim {d0}")
        if as_array(self.body_state).shape[0] * d0 != lay.dim:
            raise LayoutError("body state does not match the non-system factors")
        lay.check(self.coupling)
        err = unitarity_error(self.coupling)
        if err > tolerances.current().unitarity:
            raise ContractViolation(f"coupling is not unitary: max|U^H U - I| = {err:.3e}")
        if as_array(self.thr_free_evolution).shape != (d0, d0):
            raise LayoutError("free evolution must act on the system factor")
        if self.projector is not None and self.projector.layout != lay:
            raise LayoutError("projector was built for a different layout")
        sig = tuple(self.signal_projectors)
        if len(sig) != len(self.decomposition):
            raise LayoutError("one signal projector per retained channel required")
        for q in sig:
            lay.check(q)
        object.__setattr__(self, "signal_projectors", sig)


@dataclass(frozen=True, eq=False)
class BilinearExpansion:
    """Evolved cross terms T_kk' of the quadratic form sum c_k c_k'^* T_kk'."""

    terms: tuple[tuple[np.ndarray, ...], ...]
    coeffs: tuple[complex, ...]
    absorbed_flags: tuple[bool, ...]
    sector_traces: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.coeffs)

    def diagonal(self, k: int) -> StateOperator:
        return StateOperator.unchecked(self.terms[k][k])

    def term(self, k: int, kp: int) -> OperatorMatrix:
        return OperatorMatrix(self.terms[k][kp])

    def resum(self, coeffs: Sequence[complex] | None = None) -> np.ndarray:
        c = self.coeffs if coeffs is None else tuple(coeffs)
        n = len(c)
        return sum(c[k] * np.conj(c[kp]) * self.terms[k][kp] for k in range(n) for kp in range(n))


def composite_initial(scenario: ScreeningScenario) -> StateOperator:
    """|psi><psi| (x) T with psi rebuilt from the channel decomposition."""
    psi = scenario.decomposition.state()
    return tensor(psi.projector(), StateOperator.unchecked(as_array(scenario.body_state)))


def unitary_end_state(scenario: ScreeningScenario) -> StateOperator:
    """Schroedinger-evolved (uncorrected) end state U nu Pi (|psi><psi| (x) T) Pi U^dagger."""
    start = project_normalize(composite_initial(scenario), scenario.projector)
    return evolve(scenario.coupling, start)


def expand_bilinear(scenario: ScreeningScenario) -> BilinearExpansion:
    """Evolve each cross term nu_kk' U Pi (|psi_k><psi_k'| (x) T) Pi U^dagger.

    Each term carries nu_kk' = 1/sqrt(t_k t_k') with t_k = tr Pi(|psi_k><psi_k| (x) T)Pi,
    so the diagonal terms are exactly the single-channel evolved states.
    When the channels are separated from the body's identical particles the
    t_k coincide and the cross traces vanish; then ``resum()`` reproduces
    :func:`unitary_end_state`.
    """
    dec = scenario.decomposition
    body = as_array(scenario.body_state)
    u = as_array(scenario.coupling)
    ud = u.conj().T
    n = len(dec)
    raw = [[sandwich(np.kron(np.outer(dec.channels[k].amplitudes,
                                      dec.channels[kp].amplitudes.conj()), body),
                     scenario.projector)
            for kp in range(n)] for k in range(n)]
    traces = []
    for k in range(n):
        t = float(np.trace(raw[k][k]).real)
        if t < tolerances.current().annihilation:
            raise ProjectorAnnihilation(f"channel {k} is annihilated by the projector "
                                        f"(tr = {t:.3e})", channel=k, weight=t)
        traces.append(t)
    terms = []
    for k in range(n):
        row = []
        for kp in range(n):
            m = u @ raw[k][kp] @ ud / np.sqrt(traces[k] * traces[kp])
            if k == kp:
                m = 0.5 * (m + m.conj().T)
            m.setflags(write=False)
            row.append(m)
        terms.append(tuple(row))
    return BilinearExpansion(tuple(terms), dec.coeffs, dec.absorbed_flags, tuple(traces))


def _sectors_orthogonal(qs: Sequence[np.ndarray]) -> bool:
    tol = tolerances.current().orthogonality
    for i in range(len(qs)):
        for j in range(i):
            if np.max(np.abs(qs[i] @ qs[j])) > tol:
                return False
    return True


def signal_occupancies(state, signal_projectors: Sequence) -> list[float]:
    r = as_array(state)
    return [float(np.real(np.trace(as_array(q) @ r))) for q in signal_projectors]


def reduction_triggered(expansion: BilinearExpansion, signal_projectors: Sequence) -> bool:
    """True iff every alternative ends in its own signal sector and some channel is absorbed.

    The sector clause requires tr(Q_k T_kk) > 1 - leakage for each k with
    mutually orthogonal Q_k; the absorption clause stands for the loss of
    separation status by dissipation, declared per channel.
    """
    qs = [as_array(q) for q in signal_projectors]
    if len(qs) != len(expansion):
        return False
    if not any(expansion.absorbed_flags):
        return False
    if not _sectors_orthogonal(qs):
        return False
    leak = tolerances.current().signal_leakage
    return all(float(np.real(np.trace(qs[k] @ expansion.terms[k][k]))) > 1.0 - leak
               for k in range(len(qs)))


def _through_component(scenario: ScreeningScenario, k: int) -> StateOperator:
    """|psi'_k><psi'_k| (x) T_k, with the (anti)symmetrization left out.

    psi'_k is the free evolution of the channel; T_k is the body marginal of
    the unsymmetrized joint evolution of |psi_k><psi_k| (x) T, i.e. the body
    state evolved in the description where the system is distinguishable.
    """
    psi_k = scenario.decomposition.channels[k]
    psi_out = StateVector(as_array(scenario.thr_free_evolution) @ psi_k.amplitudes)
    joint = evolve(scenario.coupling,
                   tensor(psi_k.projector(), StateOperator.unchecked(as_array(scenario.body_state))))
    body = partial_trace(joint, scenario.layout, range(1, scenario.layout.n_factors))
    return tensor(psi_out.normalize().projector(), body)


def reduce(scenario: ScreeningScenario,
           expansion: BilinearExpansion | None = None) -> ProperMixture:
    """Replace the evolved superposition by the proper mixture of its alternatives.

    Raises :class:`NoReduction` (carrying the unitary end state) when the
    trigger predicate is false.
    """
    if expansion is None:
        expansion = expand_bilinear(scenario)
    if not reduction_triggered(expansion, scenario.signal_projectors):
        raise NoReduction("no reduction applies; unitary state stands",
                          end_state=unitary_end_state(scenario))
    comps = []
    for k, c in enumerate(expansion.coeffs):
        if expansion.absorbed_flags[k]:
            state = expansion.diagonal(k)
        else:
            state = _through_component(scenario, k)
        comps.append((abs(c) ** 2, state))
    return ProperMixture(tuple(comps), labels=scenario.decomposition.sector_ids)


def final_state(scenario: ScreeningScenario) -> ProperMixture | StateOperator:
    """Proper mixture when the reduction applies, otherwise the unitary end state."""
    try:
        return reduce(scenario)
    except NoReduction as exc:
        return exc.end_state


def through_body_drift(scenario: ScreeningScenario) -> dict[int, float]:
    """Trace distance between each through channel's final body state and the initial one."""
    out = {}
    body0 = as_array(scenario.body_state)
    for k, absorbed in enumerate(scenario.decomposition.absorbed_flags):
        if absorbed:
            continue
        comp = _through_component(scenario, k)
        body = partial_trace(comp, scenario.layout, range(1, scenario.layout.n_factors))
        out[scenario.decomposition.sector_ids[k]] = trace_distance(body, body0)
    return out


def sample(mixture: ProperMixture, seed) -> tuple[int, StateOperator]:
    """Draw the component an individual system occupies."""
    rng = np.random.default_rng(seed)
    k = int(rng.choice(len(mixture), p=mixture.weights / mixture.weights.sum()))
    return k, mixture.states[k]


def sample_indices(mixture: ProperMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    w = mixture.weights / mixture.weights.sum()
    return rng.choice(len(mixture), size=n, p=w)


def fingerprint(state, signal_projectors: Sequence = ()) -> dict:
    r = as_array(state)
    return {
        "trace": float(np.real(np.trace(r))),
        "purity": purity(r),
        "signal_occupancies": signal_occupancies(r, signal_projectors),
    }


# -- unitary covariance -------------------------------------------------------

def _frame_factors(v, scenario: ScreeningScenario) -> list[np.ndarray]:
    vm = as_array(v)
    lay = scenario.layout
    group = set(scenario.projector.group.factor_indices) if scenario.projector else set()
    group.add(0)
    mats = []
    for i, d in enumerate(lay.factor_dims):
        if i in group:
            if vm.shape != (d, d):
                raise LayoutError(f"single-particle unitary of shape {vm.shape} does not fit "
                                  f"factor {i} of dim {d}")
            mats.append(vm)
        else:
            mats.append(np.eye(d, dtype=complex))
    return mats


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def extend_unitary(v, scenario: ScreeningScenario) -> np.ndarray:
    """v (x) v (x) ... on the system and every factor identical to it, identity elsewhere."""
    return _kron_all(_frame_factors(v, scenario))


def transform_scenario(scenario: ScreeningScenario, v) -> ScreeningScenario:
    """The same experiment described in a unitarily rotated single-particle frame."""
    vm = as_array(v)
    if unitarity_error(vm) > tolerances.current().unitarity:
        raise ContractViolation("frame change must be unitary")
    mats = _frame_factors(vm, scenario)
    big = _kron_all(mats)
    body = _kron_all(mats[1:])
    dec = scenario.decomposition
    new_dec = ChannelDecomposition(tuple(StateVector(vm @ ch.amplitudes) for ch in dec.channels),
                                   dec.coeffs, dec.absorbed_flags, dec.sector_ids)

    def conj(m):
        return big @ as_array(m) @ big.conj().T

    return ScreeningScenario(
        layout=scenario.layout,
        decomposition=new_dec,
        body_state=StateOperator.unchecked(body @ as_array(scenario.body_state) @ body.conj().T),
        coupling=OperatorMatrix(conj(scenario.coupling)),
        projector=scenario.projector,
        thr_free_evolution=OperatorMatrix(vm @ as_array(scenario.thr_free_evolution) @ vm.conj().T),
        signal_projectors=tuple(OperatorMatrix(conj(q)) for q in scenario.signal_projectors),
        metadata=dict(scenario.metadata, frame="transformed"),
    )


def covariance_deviation(scenario: ScreeningScenario, v) -> float:
    """Max deviation between V R_k V^dagger and the components reduced in the rotated frame.

    Weight differences are folded into the same maximum. When no reduction
    applies, the unitary end states are compared instead.
    """
    big = extend_unitary(v, scenario)
    rotated = transform_scenario(scenario, v)
    a, b = final_state(scenario), final_state(rotated)
    if isinstance(a, ProperMixture) != isinstance(b, ProperMixture):
        return float("inf")
    if isinstance(a, StateOperator):
        return trace_distance(big @ a.entries @ big.conj().T, b)
    if len(a) != len(b):
        return float("inf")
    worst = float(np.max(np.abs(a.weights - b.weights)))
    for sa, sb in zip(a.states, b.states):
        worst = max(worst, trace_distance(big @ sa.entries @ big.conj().T, sb))
    return worst
