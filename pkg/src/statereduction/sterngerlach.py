"""Stern-Gerlach registration with a toy emulsion detector.

The registered atom carries spin (+, -) and a coarse center-of-mass cell
(the ancilla). The ancilla has six equal blocks of ``B = ancilla_levels / 6``
cells::

    0 beam    where the prepared packet sits
    1 strip0  reached by spin + after the field
    2 strip1  reached by spin -
    3 sink0   atom dissipated in the strip-0 emulsion
    4 sink1   atom dissipated in the strip-1 emulsion
    5 bulk    silver already bound in the emulsion (the optional twin atom)

The atom factor is ``spin (x) cell`` with spin the slow index (spin + = 0).
Grains are separate factors; grain level 0 is metastable, 1 fired. The first
``ceil(G/2)`` grains form strip 0, the rest strip 1. Each strip cell is wired
to one grain of its strip by a seeded uniform draw.

The coupling is the permutation ``U = U_absorb U_split``: ``U_split`` swaps
the beam block with strip0 (spin +) or strip1 (spin -); ``U_absorb`` swaps
(strip_s cell o, grain w(s,o) metastable) with (sink_s cell o, grain fired),
provided the packet energy reaches the emulsion threshold.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tolerances
from .errors import ContractViolation, DimensionBudgetExceeded, NoReduction
from .qstate import OperatorMatrix, SpaceLayout, StateOperator, StateVector, evolve, trace_distance
from .reduction import (BilinearExpansion, ChannelDecomposition, ProperMixture, ScreeningScenario,
                        covariance_deviation, expand_bilinear, reduce, reduction_triggered,
                        signal_occupancies)
from .symmetry import IdenticalGroup, build_projector, project_normalize

MAX_DIM = 4096
N_BLOCKS = 6
BEAM, STRIP0, STRIP1, SINK0, SINK1, BULK = range(N_BLOCKS)
SPINS = ("+", "-")
TRIAL_BLOCK = 8192


@dataclass(frozen=True)
class SGConfig:
    ancilla_levels: int = 12
    detector_grains: int = 4
    grain_levels: int = 2
    packet_center: float = 2.0
    packet_width: float = 0.5
    threshold: float = 1.0
    seed: int = 0
    twin: bool = False
    statistics: str | None = "fermionic"

    def __post_init__(self):
        if self.ancilla_levels < N_BLOCKS or self.ancilla_levels % N_BLOCKS:
            raise ValueError(f"ancilla_levels must be a positive multiple of {N_BLOCKS}, "
                             f"got {self.ancilla_levels}")
        if self.detector_grains < 2:
            raise ValueError("detector_grains must be >= 2 (one strip each side)")
        if self.grain_levels < 2:
            raise ValueError("grain_levels must be >= 2")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.packet_width <= 0:
            raise ValueError("packet_width must be > 0")
        if self.statistics not in (None, "bosonic", "fermionic"):
            raise ValueError(f"unknown statistics {self.statistics!r}")

    @property
    def block(self) -> int:
        return self.ancilla_levels // N_BLOCKS

    @property
    def atom_dim(self) -> int:
        return 2 * self.ancilla_levels

    @property
    def packet_energy(self) -> float:
        """Mean kinetic energy (unit mass) of a packet with mean momentum and spread."""
        return 0.5 * (self.packet_center ** 2 + self.packet_width ** 2)

    @property
    def fires(self) -> bool:
        return self.packet_energy >= self.threshold

    @property
    def symmetrized(self) -> bool:
        return self.twin and self.statistics is not None

    def strips(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        n0 = math.ceil(self.detector_grains / 2)
        return tuple(range(n0)), tuple(range(n0, self.detector_grains))

    def wiring(self) -> np.ndarray:
        """wiring[s, o]: grain fired by an atom in cell o of strip s."""
        rng = np.random.default_rng(self.seed)
        strips = self.strips()
        return np.array([[strips[s][int(rng.integers(len(strips[s])))] for _ in range(self.block)]
                         for s in range(2)])

    def layout(self) -> SpaceLayout:
        dims = [self.atom_dim] + ([self.atom_dim] if self.twin else [])
        labels = ["atom"] + (["twin"] if self.twin else [])
        dims += [self.grain_levels] * self.detector_grains
        labels += [f"grain{g}" for g in range(self.detector_grains)]
        return SpaceLayout(tuple(dims), tuple(labels))

    def composite_dim(self) -> int:
        return self.layout().dim


@dataclass(frozen=True)
class SGOutcome:
    j: str
    strip: int
    fired_grain: int
    final_state_fingerprint: dict = field(default_factory=dict)


def _spin_index(j) -> int:
    """'+' or +1 is spin up (index 0), '-' or -1 spin down (index 1)."""
    if isinstance(j, str):
        if j in SPINS:
            return SPINS.index(j)
    elif j in (1, -1):
        return 0 if j == 1 else 1
    raise ValueError(f"spin label must be '+' or '-', got {j!r}")


def _check_budget(config: SGConfig) -> None:
    dim = config.composite_dim()
    if dim > MAX_DIM:
        raise DimensionBudgetExceeded(f"composite dimension {dim} exceeds the budget {MAX_DIM}")


def packet(config: SGConfig) -> np.ndarray:
    """Discretized Gaussian profile over the beam cells."""
    b = config.block
    o = np.arange(b) - 0.5 * (b - 1)
    amp = np.exp(-o ** 2 / (4.0 * config.packet_width ** 2))
    return amp / np.linalg.norm(amp)


def definite_spin_state(config: SGConfig, j) -> StateVector:
    a = np.zeros(config.atom_dim, dtype=complex)
    s = _spin_index(j)
    a[s * config.ancilla_levels + BEAM * config.block + np.arange(config.block)] = packet(config)
    return StateVector(a)


def _split_map(config: SGConfig) -> np.ndarray:
    """Single-atom permutation as an index map on spin (x) cell."""
    A, B = config.ancilla_levels, config.block
    f = np.arange(config.atom_dim)
    for s, target in ((0, STRIP0), (1, STRIP1)):
        for o in range(B):
            i, k = s * A + BEAM * B + o, s * A + target * B + o
            f[i], f[k] = k, i
    return f


def _digits(layout: SpaceLayout) -> np.ndarray:
    return np.array(np.unravel_index(np.arange(layout.dim), layout.factor_dims))


def _permutation_matrix(target: np.ndarray) -> np.ndarray:
    n = target.size
    m = np.zeros((n, n), dtype=complex)
    m[target, np.arange(n)] = 1.0
    return m


def coupling_maps(config: SGConfig) -> tuple[np.ndarray, np.ndarray]:
    """Basis-index images under U_split and U_absorb on the full composite."""
    layout = config.layout()
    dims = layout.factor_dims
    particles = [0, 1] if config.twin else [0]
    first_grain = len(particles)
    A, B = config.ancilla_levels, config.block

    dig = _digits(layout)
    split = dig.copy()
    f = _split_map(config)
    for p in particles:
        split[p] = f[dig[p]]
    split_target = np.ravel_multi_index(tuple(split), dims)

    absorb = dig.copy()
    if config.fires:
        wiring = config.wiring()
        cols = np.arange(layout.dim)
        for p in particles:
            cell = absorb[p] % A
            spin = absorb[p] // A
            blk, off = cell // B, cell % B
            for s, (strip, sink) in enumerate(((STRIP0, SINK0), (STRIP1, SINK1))):
                g = wiring[s][off] + first_grain
                level = absorb[g, cols]
                fire = (blk == strip) & (level == 0)
                unfire = (blk == sink) & (level == 1)
                new = absorb.copy()
                new[p] = np.where(fire, spin * A + sink * B + off, new[p])
                new[p] = np.where(unfire, spin * A + strip * B + off, new[p])
                new[g, cols] = np.where(fire, 1, np.where(unfire, 0, level))
                absorb = new
    # absorb holds the image digits of each basis state; compose with split
    absorb_target = np.ravel_multi_index(tuple(absorb), dims)
    return split_target, absorb_target


def build_coupling(config: SGConfig) -> OperatorMatrix:
    split_target, absorb_target = coupling_maps(config)
    return OperatorMatrix(_permutation_matrix(absorb_target[split_target]))


def detector_state(config: SGConfig) -> StateOperator:
    """All grains metastable; the twin (if any) unpolarized and spread over the bulk cells."""
    grains = np.zeros(config.grain_levels ** config.detector_grains)
    grains[0] = 1.0
    t = np.diag(grains).astype(complex)
    if config.twin:
        A, B = config.ancilla_levels, config.block
        w = np.zeros(config.atom_dim)
        for s in range(2):
            w[s * A + BULK * B + np.arange(B)] = 1.0
        t = np.kron(np.diag(w / w.sum()), t)
    return StateOperator.unchecked(t)


def strip_projectors(config: SGConfig) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Signal sectors: some grain of strip s fired and none of the other strip.

    Mutually orthogonal by construction.
    """
    layout = config.layout()
    dig = _digits(layout)
    first = 2 if config.twin else 1
    hits = []
    for strip in config.strips():
        hit = np.zeros(layout.dim, dtype=bool)
        for g in strip:
            hit |= dig[first + g] >= 1
        hits.append(hit)
    sectors = (hits[0] & ~hits[1], hits[1] & ~hits[0])
    return tuple(OperatorMatrix(np.diag(h.astype(complex))) for h in sectors)


def grain_projectors(config: SGConfig) -> list[np.ndarray]:
    """Diagonal of 'grain g fired' for every grain, as boolean masks over the composite basis."""
    layout = config.layout()
    dig = _digits(layout)
    first = 2 if config.twin else 1
    return [dig[first + g] >= 1 for g in range(config.detector_grains)]


def _projector(config: SGConfig):
    if not config.symmetrized:
        return None
    return build_projector(config.layout(), IdenticalGroup((0, 1), config.statistics))


def build_sg_scenario(config: SGConfig, c_plus: complex = 1 / math.sqrt(2),
                      c_minus: complex = 1 / math.sqrt(2)) -> ScreeningScenario:
    """Screening scenario of the spin measurement for amplitudes (c+, c-).

    Channels are the two definite-spin packets; channels with negligible
    amplitude are dropped. Both channels are absorbed in the emulsion when the
    packet energy reaches the threshold.
    """
    _check_budget(config)
    tol = tolerances.current()
    norm = abs(c_plus) ** 2 + abs(c_minus) ** 2
    if abs(norm - 1.0) > tol.weight_sum:
        raise ContractViolation(f"|c+|^2 + |c-|^2 = {norm!r} differs from 1")
    coeffs = [complex(c_plus), complex(c_minus)]
    keep = [k for k in range(2) if abs(coeffs[k]) > tol.channel_drop]
    dec = ChannelDecomposition(
        channels=tuple(definite_spin_state(config, SPINS[k]) for k in keep),
        coeffs=tuple(coeffs[k] for k in keep),
        absorbed_flags=tuple(config.fires for _ in keep),
        sector_ids=tuple(keep),
    )
    strips = strip_projectors(config)
    f = _split_map(config)
    return ScreeningScenario(
        layout=config.layout(),
        decomposition=dec,
        body_state=detector_state(config),
        coupling=build_coupling(config),
        projector=_projector(config),
        thr_free_evolution=OperatorMatrix(_permutation_matrix(f)),
        signal_projectors=tuple(strips[k] for k in keep),
        metadata={"model": "stern-gerlach", "config": asdict(config),
                  "wiring": config.wiring().tolist(), "grain_choice": "seeded uniform per cell"},
    )


def evolve_definite_spin(config: SGConfig, j) -> StateOperator:
    """T_j(t2): the definite-spin packet plus detector, (anti)symmetrized and evolved."""
    _check_budget(config)
    psi = definite_spin_state(config, j)
    start = StateOperator.unchecked(np.kron(psi.projector().entries, detector_state(config).entries))
    proj = _projector(config)
    if proj is not None:
        start = project_normalize(start, proj)
    return evolve(build_coupling(config), start)


def strip_occupancies(config: SGConfig, state) -> list[float]:
    return signal_occupancies(state, strip_projectors(config))


def run_superposition(config: SGConfig, c_plus: complex,
                      c_minus: complex) -> tuple[BilinearExpansion, ProperMixture]:
    """Expand the evolved superposition and reduce it to the proper mixture of strip signals.

    Checks that every diagonal term equals the independently evolved
    definite-spin state.
    """
    scenario = build_sg_scenario(config, c_plus, c_minus)
    expansion = expand_bilinear(scenario)
    tol = tolerances.current()
    for k, sid in enumerate(scenario.decomposition.sector_ids):
        dev = trace_distance(expansion.diagonal(k), evolve_definite_spin(config, SPINS[sid]))
        if dev > tol.weight_sum:
            raise ContractViolation(f"diagonal term {SPINS[sid]} deviates from the definite-spin "
                                    f"evolution by {dev:.2e}")
    return expansion, reduce(scenario, expansion)


def is_registered(config: SGConfig, c_plus: complex, c_minus: complex) -> bool:
    scenario = build_sg_scenario(config, c_plus, c_minus)
    return reduction_triggered(expand_bilinear(scenario), scenario.signal_projectors)


@dataclass
class BatchTally:
    n_trials: int
    seed: int
    registered: bool
    counts: list[int]
    no_registration: int
    expected: list[float]
    spins: np.ndarray = field(repr=False, default=None)
    strips: np.ndarray = field(repr=False, default=None)
    grains: np.ndarray = field(repr=False, default=None)

    @property
    def frequencies(self) -> list[float]:
        return [c / self.n_trials for c in self.counts]

    def sigma(self) -> list[float]:
        return [math.sqrt(p * (1 - p) / self.n_trials) for p in self.expected]

    def within_band(self, n_sigma: float = 3.0) -> list[bool]:
        if not self.registered:
            return [False, False]
        return [abs(f - p) <= n_sigma * s + 1e-15
                for f, p, s in zip(self.frequencies, self.expected, self.sigma())]

    def summary(self) -> dict:
        return {"n_trials": self.n_trials, "seed": self.seed, "registered": self.registered,
                "counts": self.counts, "no_registration": self.no_registration,
                "frequencies": self.frequencies, "expected": self.expected,
                "sigma": self.sigma(), "within_3sigma": self.within_band(3.0)}


def _sample_block(args):
    seed, block, n, weights, grain_probs = args
    rng = np.random.default_rng([seed, block])
    comp = rng.choice(len(weights), size=n, p=weights)
    u = rng.random(n)
    cdf = np.cumsum(grain_probs, axis=1)
    cdf[:, -1] = 1.0
    grain = np.zeros(n, dtype=int)
    for c in range(len(weights)):
        sel = comp == c
        grain[sel] = np.searchsorted(cdf[c], u[sel], side="right")
    return comp, grain


def run_batch(config: SGConfig, c_plus: complex, c_minus: complex, n_trials: int,
              seed: int | None = None, jobs: int = 1) -> BatchTally:
    """Sample ``n_trials`` individual registrations from the proper mixture.

    Each trial draws the spin alternative with Born weight and then the fired
    grain from that alternative's grain occupancies. Trials are grouped in
    fixed blocks with their own seeds, so the tally does not depend on
    ``jobs``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    seed = config.seed if seed is None else seed
    try:
        _, mixture = run_superposition(config, c_plus, c_minus)
    except NoReduction:
        return BatchTally(n_trials, seed, False, [0, 0], n_trials,
                          [abs(c_plus) ** 2, abs(c_minus) ** 2],
                          spins=np.full(n_trials, -1), strips=np.full(n_trials, -1),
                          grains=np.full(n_trials, -1))
    masks = grain_projectors(config)
    strips = strip_projectors(config)
    grain_probs, comp_strip = [], []
    for state in mixture.states:
        diag = np.real(np.diag(state.entries))
        p = np.array([diag[m].sum() for m in masks])
        grain_probs.append(p / p.sum())
        comp_strip.append(int(np.argmax(signal_occupancies(state, strips))))
    grain_probs = np.array(grain_probs)
    weights = mixture.weights / mixture.weights.sum()
    labels = np.array(mixture.labels)

    tasks = []
    for b, start in enumerate(range(0, n_trials, TRIAL_BLOCK)):
        tasks.append((seed, b, min(TRIAL_BLOCK, n_trials - start), weights, grain_probs))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_sample_block, tasks))
    else:
        parts = [_sample_block(t) for t in tasks]
    comp = np.concatenate([p[0] for p in parts])
    grains = np.concatenate([p[1] for p in parts])
    spins = labels[comp]
    strip_of = np.array(comp_strip)[comp]
    counts = [int(np.sum(strip_of == s)) for s in range(2)]
    return BatchTally(n_trials, seed, True, counts, 0,
                      [abs(c_plus) ** 2, abs(c_minus) ** 2],
                      spins=spins, strips=strip_of, grains=grains)


def outcome(config: SGConfig, mixture: ProperMixture, index: int, grain: int) -> SGOutcome:
    state = mixture.states[index]
    occ = strip_occupancies(config, state)
    return SGOutcome(j=SPINS[mixture.labels[index]], strip=int(np.argmax(occ)), fired_grain=grain,
                     final_state_fingerprint={"trace": float(np.real(np.trace(state.entries))),
                                              "purity": state.purity(),
                                              "strip_occupancies": occ})


def covariance_check(config: SGConfig, v, c_plus: complex = 1 / math.sqrt(2),
                     c_minus: complex = 1 / math.sqrt(2)) -> float:
    """Max deviation between rotated components V R_k V^dagger and those reduced in the rotated frame."""
    scenario = build_sg_scenario(config, c_plus, c_minus)
    vm = np.asarray(v, dtype=complex)
    if vm.shape != (2, 2):
        raise ContractViolation("v must act on the spin factor (2x2)")
    return covariance_deviation(scenario, np.kron(vm, np.eye(config.ancilla_levels)))
