"""Seeded invariant suites behind ``statereduction verify``.

Every suite returns a :class:`SuiteResult`; failures, including exceptions
raised inside a suite, are recorded as data rather than propagated.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import tolerances
from .errors import NoReduction, StateReductionError
from .qstate import (OperatorMatrix, SpaceLayout, evolve, random_density, random_unitary,
                     trace_distance)
from .reduction import (composite_initial, covariance_deviation, expand_bilinear, reduce,
                        signal_occupancies, unitary_end_state)
from .screens import random_screen
from .squid import FluxGrid, SquidParams, analyze_double_well, build_hamiltonian, eigensolve
from .sterngerlach import SGConfig, build_sg_scenario, evolve_definite_spin
from .symmetry import IdenticalGroup, build_projector, project_normalize, projector_rank


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_deviation: float
    limit: float
    instances: int
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _run(name: str, limit: float, body) -> SuiteResult:
    try:
        worst, n, details = body()
    except StateReductionError as exc:
        return SuiteResult(name, False, math.inf, limit, 0,
                           {"error": type(exc).__name__, "message": str(exc)})
    return SuiteResult(name, bool(worst < limit), float(worst), limit, n, details)


def qstate_suite(seed: int, instances: int) -> SuiteResult:
    def body():
        rng = np.random.default_rng([seed, 1])
        worst = 0.0
        for _ in range(instances):
            d = int(rng.integers(2, 7))
            u, v = (random_unitary(d, int(rng.integers(2**31))) for _ in range(2))
            rho = random_density(d, int(rng.integers(2**31)))
            two = evolve(v, evolve(u, rho))
            one = evolve(v.entries @ u.entries, rho)
            worst = max(worst, float(np.max(np.abs(two.entries - one.entries))))
        return worst, instances, {"property": "evolve(V, evolve(U, rho)) = evolve(VU, rho)"}
    return _run("qstate.evolution_composition", tolerances.current().unitarity, body)


def symmetry_suite(seed: int, instances: int) -> SuiteResult:
    def body():
        rng = np.random.default_rng([seed, 2])
        worst = 0.0
        for _ in range(instances):
            d = int(rng.integers(2, 4))
            n = int(rng.integers(2, 4))
            layout = SpaceLayout((d,) * n)
            stats = "fermionic" if rng.random() < 0.5 else "bosonic"
            p = build_projector(layout, IdenticalGroup(tuple(range(n)), stats)).matrix
            u = random_unitary(d, int(rng.integers(2**31))).entries
            big = u
            for _ in range(n - 1):
                big = np.kron(big, u)
            worst = max(worst, float(np.max(np.abs(p @ p - p))),
                        float(np.max(np.abs(big @ p - p @ big))))
        singlet = projector_rank(build_projector(SpaceLayout((2, 2)), IdenticalGroup((0, 1))))
        three = projector_rank(build_projector(SpaceLayout((2, 2, 2)), IdenticalGroup((0, 1, 2))))
        if singlet != 1 or three != 0:
            worst = math.inf
        return worst, instances, {"singlet_rank": singlet, "three_fermion_rank": three}
    return _run("symmetry.projector_algebra", tolerances.current().idempotence, body)


def reduction_suite(seed: int, instances: int) -> SuiteResult:
    """Weight sum, block-trace oracle and resummation on random absorbing screens."""
    def body():
        worst = {"weight_sum": 0.0, "block_trace": 0.0, "resummation": 0.0}
        for i in range(instances):
            sc = random_screen(seed * 100003 + i)
            exp = expand_bilinear(sc)
            mix = reduce(sc, exp)
            end = unitary_end_state(sc)
            worst["weight_sum"] = max(worst["weight_sum"], abs(float(mix.weights.sum()) - 1.0))
            blocks = signal_occupancies(end, sc.signal_projectors)
            worst["block_trace"] = max(worst["block_trace"],
                                       float(np.max(np.abs(np.array(blocks) - mix.weights))))
            worst["resummation"] = max(worst["resummation"],
                                       trace_distance(exp.resum(), end))
        return max(worst.values()), instances, worst
    return _run("reduction.weights_and_resummation", tolerances.current().weight_sum, body)


def covariance_suite(seed: int, instances: int, *, inject_nonunitary: bool = False) -> SuiteResult:
    """Reduction commutes with single-particle frame changes on screens and Stern-Gerlach runs.

    ``inject_nonunitary`` swaps in a coupling that is not unitary (negative control).
    """
    def body():
        rng = np.random.default_rng([seed, 3])
        worst, per_model = 0.0, {"screening": 0.0, "sterngerlach": 0.0}
        for i in range(instances):
            sc = random_screen(seed * 100003 + i)
            if inject_nonunitary:
                sc = dataclasses.replace(sc, coupling=OperatorMatrix(1.001 * sc.coupling.entries))
            v = random_unitary(sc.layout.factor_dims[0], int(rng.integers(2**31)))
            dev = covariance_deviation(sc, v)
            per_model["screening"] = max(per_model["screening"], dev)
        sg = SGConfig(ancilla_levels=6, detector_grains=2, seed=seed)
        for i in range(max(1, instances // 10)):
            c = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            c /= np.linalg.norm(c)
            v = random_unitary(2, int(rng.integers(2**31))).entries
            scen = build_sg_scenario(sg, c[0], c[1])
            dev = covariance_deviation(scen, np.kron(v, np.eye(sg.ancilla_levels)))
            per_model["sterngerlach"] = max(per_model["sterngerlach"], dev)
        worst = max(per_model.values())
        return worst, instances, per_model
    return _run("reduction.unitary_covariance", tolerances.current().covariance, body)


def no_reduction_suite(seed: int, instances: int) -> SuiteResult:
    """Pure scattering: the unitary end state stands and equals a direct evolution."""
    def body():
        worst = 0.0
        for i in range(instances):
            sc = random_screen(seed * 100003 + i, builder="scatter")
            try:
                reduce(sc)
                return math.inf, i + 1, {"error": "reduction applied to a scattering scenario"}
            except NoReduction as exc:
                direct = evolve(sc.coupling, project_normalize(composite_initial(sc), sc.projector))
                worst = max(worst, trace_distance(exc.end_state, direct))
        return worst, instances, {}
    return _run("reduction.no_reduction_control", 1e-12, body)


def sterngerlach_suite(seed: int, instances: int) -> SuiteResult:
    """Diagonal bilinear terms equal the definite-spin evolutions."""
    def body():
        rng = np.random.default_rng([seed, 4])
        worst = 0.0
        n = max(1, instances // 10)
        for _ in range(n):
            cfg = SGConfig(ancilla_levels=6 * int(rng.integers(1, 3)),
                           detector_grains=int(rng.integers(2, 5)),
                           packet_width=float(rng.uniform(0.3, 2.0)),
                           seed=int(rng.integers(2**31)))
            c = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            c /= np.linalg.norm(c)
            sc = build_sg_scenario(cfg, c[0], c[1])
            exp = expand_bilinear(sc)
            for k, spin in enumerate(("+", "-")):
                worst = max(worst, trace_distance(exp.diagonal(k), evolve_definite_spin(cfg, spin)))
        return worst, n, {}
    return _run("sterngerlach.linearity", tolerances.current().weight_sum, body)


def squid_suite(seed: int, instances: int) -> SuiteResult:
    """Harmonic oracle and the symmetric double well."""
    def body():
        p = SquidParams(critical_current=0.0)
        spec = eigensolve(build_hamiltonian(FluxGrid(-8.0, 8.0, 2001), p), 5)
        exact = p.hbar * p.omega * (np.arange(5) + 0.5)
        harmonic = float(np.max(np.abs(spec.eigenvalues - exact) / exact))
        rep = analyze_double_well(SquidParams.from_beta(1.2))
        parity = max(abs(rep.spectrum.mirror_overlap(0) - 1), abs(rep.spectrum.mirror_overlap(1) + 1))
        ok = rep.symmetric and rep.splitting > 0 and harmonic < 1e-4
        return (parity if ok else math.inf), 2, {"harmonic_rel_error": harmonic,
                                                 "splitting": rep.splitting,
                                                 "minima_sum": rep.phi1 + rep.phi2}
    return _run("squid.oracles", tolerances.current().edge_amplitude, body)


def run_all(seed: int = 0, instances: int = 100, *, inject_nonunitary: bool = False) -> list[SuiteResult]:
    return [
        qstate_suite(seed, instances),
        symmetry_suite(seed, min(instances, 20)),
        reduction_suite(seed, instances),
        covariance_suite(seed, instances, inject_nonunitary=inject_nonunitary),
        no_reduction_suite(seed, min(instances, 20)),
        sterngerlach_suite(seed, instances),
        squid_suite(seed, instances),
    ]
