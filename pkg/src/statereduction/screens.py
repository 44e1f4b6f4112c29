"""Toy screens: concrete couplings for the screening reduction engine.

Single-particle space of the system, ``4 * modes`` levels split into four
blocks of ``modes`` levels each::

    thr   beam modes that pass the screen
    sw    beam modes that hit the absorbing wall
    dis   internal modes of the body into which absorbed particles dissipate
    bulk  internal modes occupied by the body's own particle of the same type

Composite layout: ``system (x) twin (x) pointer``. The twin is one particle
of the body identical to the system (kept in the bulk block), the pointer a
two-level record of absorption (0 = ready, 1 = absorbed). The coupling is
``U = (B (x) B (x) 1) U_abs (A (x) A (x) 1)``: ``A`` is a sector-preserving
field, ``U_abs`` the permutation that moves sw into dis and flips the pointer,
``B`` a mixing of the through block and of the dissipated/bulk modes. Every
factor acts identically on system and twin, so U commutes with their exchange.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import block_diag

from .qstate import (OperatorMatrix, SpaceLayout, StateOperator, StateVector, embed,
                     random_density, random_state, random_unitary)
from .reduction import ScreeningScenario, channel_decompose
from .symmetry import IdenticalGroup, build_projector

BUILDERS = ("screen", "scatter")


def _blocks(modes: int):
    m = modes
    return {"thr": range(0, m), "sw": range(m, 2 * m), "dis": range(2 * m, 3 * m),
            "bulk": range(3 * m, 4 * m)}


def _block_projector(d: int, idx) -> np.ndarray:
    p = np.zeros((d, d), dtype=complex)
    for i in idx:
        p[i, i] = 1.0
    return p


def absorption_permutation(modes: int) -> np.ndarray:
    """U_abs on system (x) twin (x) pointer: sw <-> dis per particle, pointer flipped
    once for every particle found in sw or dis. An involution, hence a permutation."""
    b = _blocks(modes)
    d = 4 * modes
    f = np.arange(d)
    for s, t in zip(b["sw"], b["dis"]):
        f[s], f[t] = t, s
    hit = np.zeros(d, dtype=int)
    hit[list(b["sw"]) + list(b["dis"])] = 1
    dim = d * d * 2
    u = np.zeros((dim, dim), dtype=complex)
    for i in range(d):
        for j in range(d):
            for p in range(2):
                q = p ^ ((hit[i] + hit[j]) % 2)
                u[(f[i] * d + f[j]) * 2 + q, (i * d + j) * 2 + p] = 1.0
    return u


def build_screen(c_thr: complex, c_sw: complex, *, modes: int = 2,
                 statistics: str | None = "fermionic", builder: str = "screen",
                 mix_body: bool = True, seed: int = 0) -> ScreeningScenario:
    """Screening scenario with random (seeded) field, mixing and body state.

    ``builder="screen"`` absorbs the sw channel (pointer fires, channel loses
    separation status); ``builder="scatter"`` deflects it elastically with no
    absorption and no signal. ``statistics=None`` treats the twin as
    distinguishable (no projector).
    """
    if builder not in BUILDERS:
        raise ValueError(f"unknown builder {builder!r}; expected one of {BUILDERS}")
    if modes < 1:
        raise ValueError("modes must be >= 1")
    m = modes
    d = 4 * m
    b = _blocks(m)
    ss = np.random.SeedSequence(seed)
    s_field_thr, s_field_sw, s_mix_thr, s_mix_in, s_twin, s_thr, s_sw = ss.spawn(7)

    a_thr = random_unitary(m, s_field_thr).entries
    a_sw = random_unitary(m, s_field_sw).entries
    field = block_diag(a_thr, a_sw, np.eye(2 * m))
    b_thr = random_unitary(m, s_mix_thr).entries
    b_in = random_unitary(2 * m, s_mix_in).entries if mix_body else np.eye(2 * m)
    mixing = block_diag(b_thr, np.eye(m), b_in)
    if builder == "screen":
        u_abs = absorption_permutation(m)
    else:
        u_abs = np.eye(d * d * 2, dtype=complex)
    i2 = np.eye(2)
    coupling = np.kron(np.kron(mixing, mixing), i2) @ u_abs @ np.kron(np.kron(field, field), i2)
    free = mixing @ field

    layout = SpaceLayout((d, d, 2), ("system", "twin", "pointer"))
    twin = np.zeros((d, d), dtype=complex)
    bulk = list(b["bulk"])
    twin[np.ix_(bulk, bulk)] = random_density(m, s_twin).entries
    ready = np.diag([1.0, 0.0]).astype(complex)
    body = StateOperator(np.kron(twin, ready))

    psi = np.zeros(d, dtype=complex)
    psi[list(b["thr"])] = c_thr * random_state(m, s_thr).amplitudes
    psi[list(b["sw"])] += c_sw * random_state(m, s_sw).amplitudes
    sectors = [_block_projector(d, b["thr"]), _block_projector(d, b["sw"])]
    absorbed = [False, builder == "screen"]
    dec = channel_decompose(StateVector(psi), sectors, absorbed)

    fired = np.diag([0.0, 1.0]).astype(complex)
    pointer_for = {0: ready, 1: fired if builder == "screen" else ready}
    signals = tuple(embed(pointer_for[k], layout, "pointer") for k in dec.sector_ids)

    projector = None
    if statistics is not None:
        projector = build_projector(layout, IdenticalGroup((0, 1), statistics))
    return ScreeningScenario(
        layout=layout, decomposition=dec, body_state=body, coupling=OperatorMatrix(coupling),
        projector=projector, thr_free_evolution=OperatorMatrix(free), signal_projectors=signals,
        metadata={"builder": builder, "modes": m, "statistics": statistics, "seed": seed,
                  "reduction_site": "sw block of the screen body" if builder == "screen" else None},
    )


def random_amplitudes(rng: np.random.Generator, n: int = 2) -> np.ndarray:
    """Uniform point on the complex unit sphere in C^n."""
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return z / np.linalg.norm(z)


def random_screen(seed: int, *, builder: str = "screen", statistics="random",
                  modes: int | None = None) -> ScreeningScenario:
    rng = np.random.default_rng(seed)
    c = random_amplitudes(rng)
    if statistics == "random":
        statistics = [None, "bosonic", "fermionic"][int(rng.integers(3))]
    modes = int(rng.integers(1, 3)) if modes is None else modes
    return build_screen(c[0], c[1], modes=modes, statistics=statistics, builder=builder,
                        seed=int(rng.integers(2**31)))
