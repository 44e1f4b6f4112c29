"""Flux dynamics of an rf SQUID ring: double-well spectrum and tunneling.

The flux wave function obeys

    i hbar dpsi/dt = -(hbar^2 / 2C) d^2 psi / dPhi^2 + V(Phi) psi
    V(Phi) = (Phi - Phi_ext)^2 / 2L - (I_c phi0 / 2 pi) cos(2 pi Phi / phi0)

with the capacitance C in the role of a mass. Work is done in reduced units
hbar = C = phi0 = 1 unless the parameters say otherwise; :meth:`SquidParams.from_si`
converts laboratory values at the boundary and keeps the scale factors so
results can be reported back.

Discretization is a second-order finite-difference stencil on a uniform grid
with Dirichlet edges. Grid arrays always include both edge points; the
Hamiltonian acts on the ``n_points - 2`` interior points.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, eigh_tridiagonal
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from . import tolerances
from .errors import BoundaryError, NoDoubleWell, NumericalError

HBAR_SI = 1.054571817e-34
E_CHARGE_SI = 1.602176634e-19
PHI0_SI = math.pi * HBAR_SI / E_CHARGE_SI


@dataclass(frozen=True)
class SquidParams:
    capacitance: float = 1.0
    inductance: float = 1.0
    critical_current: float = 0.0
    phi_ext: float = 0.0
    phi0: float = 1.0
    hbar: float = 1.0
    units: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("capacitance", "inductance", "phi0", "hbar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.critical_current < 0:
            raise ValueError("critical_current must be >= 0")

    @property
    def beta(self) -> float:
        return 2 * math.pi * self.inductance * self.critical_current / self.phi0

    @property
    def omega(self) -> float:
        """Small-oscillation frequency of the bare quadratic term."""
        return 1.0 / math.sqrt(self.inductance * self.capacitance)

    @property
    def oscillator_length(self) -> float:
        return (self.hbar ** 2 * self.inductance / self.capacitance) ** 0.25

    @property
    def josephson_energy(self) -> float:
        return self.critical_current * self.phi0 / (2 * math.pi)

    @classmethod
    def from_beta(cls, beta: float, phi_ext: float = 0.5, *, capacitance: float = 1.0,
                  inductance: float = 1.0) -> "SquidParams":
        """Reduced units (hbar = phi0 = 1); ``phi_ext`` in units of phi0."""
        return cls(capacitance=capacitance, inductance=inductance,
                   critical_current=beta / (2 * math.pi * inductance), phi_ext=phi_ext)

    @classmethod
    def from_si(cls, capacitance: float, inductance: float, critical_current: float,
                phi_ext: float) -> "SquidParams":
        """Convert SI values (F, H, A, Wb) to reduced units hbar = C = phi0 = 1.

        Energy unit hbar^2 / (C phi0^2), time unit C phi0^2 / hbar; the factors
        are kept in ``units``.
        """
        e_unit = HBAR_SI ** 2 / (capacitance * PHI0_SI ** 2)
        units = {"flux_Wb": PHI0_SI, "energy_J": e_unit, "time_s": HBAR_SI / e_unit,
                 "capacitance_F": capacitance}
        return cls(capacitance=1.0,
                   inductance=inductance * e_unit / PHI0_SI ** 2,
                   critical_current=critical_current * PHI0_SI / e_unit,
                   phi_ext=phi_ext / PHI0_SI, units=units)

    def energy_to_si(self, e: float) -> float:
        if not self.units:
            raise ValueError("parameters were not built from SI values")
        return e * self.units["energy_J"]


def potential(phi, params: SquidParams):
    p = params
    phi = np.asarray(phi, dtype=float)
    return ((phi - p.phi_ext) ** 2 / (2 * p.inductance)
            - p.josephson_energy * np.cos(2 * math.pi * phi / p.phi0))


def potential_derivative(phi, params: SquidParams):
    p = params
    phi = np.asarray(phi, dtype=float)
    return (phi - p.phi_ext) / p.inductance + p.critical_current * np.sin(2 * math.pi * phi / p.phi0)


@dataclass(frozen=True)
class FluxGrid:
    phi_min: float
    phi_max: float
    n_points: int = 2001

    def __post_init__(self):
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be < phi_max")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")

    @property
    def h(self) -> float:
        return (self.phi_max - self.phi_min) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.phi_min, self.phi_max, self.n_points)

    @property
    def interior(self) -> np.ndarray:
        return self.points[1:-1]

    @property
    def center(self) -> float:
        return 0.5 * (self.phi_min + self.phi_max)

    def refined(self) -> "FluxGrid":
        """Same domain, half the spacing."""
        return FluxGrid(self.phi_min, self.phi_max, 2 * self.n_points - 1)

    def shifted(self, delta: float) -> "FluxGrid":
        return FluxGrid(self.phi_min + delta, self.phi_max + delta, self.n_points)


@dataclass(frozen=True, eq=False)
class Tridiagonal:
    """Real symmetric tridiagonal operator on the grid interior."""

    diagonal: np.ndarray
    offdiagonal: np.ndarray
    grid: FluxGrid
    hbar: float = 1.0

    @property
    def size(self) -> int:
        return self.diagonal.size

    def to_dense(self) -> np.ndarray:
        return (np.diag(self.diagonal) + np.diag(self.offdiagonal, 1)
                + np.diag(self.offdiagonal, -1))

    def to_sparse(self) -> sparse.csc_matrix:
        return sparse.diags([self.offdiagonal, self.diagonal, self.offdiagonal], [-1, 0, 1],
                            format="csc")

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal * v
        out[:-1] += self.offdiagonal * v[1:]
        out[1:] += self.offdiagonal * v[:-1]
        return out

    def expectation(self, psi: np.ndarray) -> float:
        """<psi|H|psi> / <psi|psi> for a full-grid wave function."""
        v = np.asarray(psi)[1:-1]
        return float(np.real(np.vdot(v, self.matvec(v))) / np.real(np.vdot(v, v)))


def build_hamiltonian(grid: FluxGrid, params: SquidParams) -> Tridiagonal:
    kin = params.hbar ** 2 / (params.capacitance * grid.h ** 2)
    diag = kin + potential(grid.interior, params)
    off = np.full(grid.n_points - 3, -0.5 * kin)
    for a in (diag, off):
        a.setflags(write=False)
    return Tridiagonal(diag, off, grid, params.hbar)


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # shape (k, n_points), zero at both edges, unit Euclidean norm
    grid: FluxGrid
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.eigenvalues.size

    def mirror_overlap(self, i: int) -> float:
        """Signed overlap of eigenvector i with its reflection about the grid center."""
        v = self.eigenvectors[i]
        return float(np.dot(v, v[::-1]))


def eigensolve(H: Tridiagonal, k: int, *, check_edges: bool = True) -> Spectrum:
    """Lowest ``k`` eigenpairs by Sturm-sequence bisection plus inverse iteration.

    Residuals and orthonormality are checked after the solve; with
    ``check_edges`` an eigenfunction that still has weight at the Dirichlet
    edges raises :class:`BoundaryError`.
    """
    if not 1 <= k <= H.size:
        raise ValueError(f"k must be in [1, {H.size}], got {k}")
    tol = tolerances.current()
    try:
        w, v = eigh_tridiagonal(H.diagonal, H.offdiagonal, select="i", select_range=(0, k - 1),
                                lapack_driver="stebz")
    except LinAlgError as exc:
        raise NumericalError("tridiagonal eigensolve did not converge",
                             {"k": k, "n": H.size, "lapack": str(exc)}) from exc
    v = v * np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(k)])
    residual = np.linalg.norm(np.column_stack([H.matvec(v[:, i]) for i in range(k)]) - v * w, axis=0)
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    gram = float(np.max(np.abs(v.T @ v - np.eye(k))))
    diagnostics = {"max_residual": float(residual.max()), "residual_scale": scale,
                   "orthonormality": gram, "n": H.size, "k": k}
    if residual.max() > tol.eigen_residual * scale or gram > tol.orthonormality:
        raise NumericalError("eigenpairs fail the residual or orthonormality check", diagnostics)
    full = np.zeros((k, H.grid.n_points))
    full[:, 1:-1] = v.T
    if check_edges:
        peak = np.max(np.abs(v), axis=0)
        edge = np.maximum(np.abs(v[0]), np.abs(v[-1])) / peak
        diagnostics["edge_amplitude"] = float(edge.max())
        if edge.max() > tol.edge_amplitude:
            raise BoundaryError(f"eigenfunction {int(np.argmax(edge))} reaches the grid edge "
                                f"(relative amplitude {edge.max():.2e}); widen the grid",
                                float(edge.max()))
    w.setflags(write=False)
    full.setflags(write=False)
    return Spectrum(w, full, H.grid, diagnostics)


def _stationary_points(params: SquidParams) -> tuple[list[float], list[float]]:
    # V' = 0 needs |Phi - Phi_ext| <= L I_c; scan a margin beyond that.
    reach = params.inductance * params.critical_current + params.phi0
    lo, hi = params.phi_ext - reach, params.phi_ext + reach
    xs = np.linspace(lo, hi, int(400 * (hi - lo) / params.phi0) + 2)
    d = potential_derivative(xs, params)
    f = lambda x: float(potential_derivative(x, params))  # noqa: E731
    minima, maxima = [], []
    for a, b, da, db in zip(xs[:-1], xs[1:], d[:-1], d[1:]):
        if da == 0.0:
            root = float(a)
        elif da * db < 0:
            root = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        else:
            continue
        (minima if db > da else maxima).append(root)
    return minima, maxima


@dataclass(frozen=True)
class DoubleWellReport:
    phi1: float
    phi2: float
    vbar: float
    E1: float
    E2: float
    splitting: float
    symmetric: bool
    beta: float
    saddle: float = float("nan")
    spectrum: Spectrum | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {"phi1": self.phi1, "phi2": self.phi2, "vbar": self.vbar, "E1": self.E1,
                "E2": self.E2, "splitting": self.splitting, "symmetric": self.symmetric,
                "beta": self.beta, "saddle": self.saddle}


def find_minima(params: SquidParams) -> tuple[float, float, float]:
    """(phi1, phi2, saddle) for the two deepest wells, phi1 < phi2."""
    minima, maxima = _stationary_points(params)
    if len(minima) < 2:
        raise NoDoubleWell(f"potential has a single well at beta = {params.beta:.4g}; "
                           "a double well needs beta > 1 near phi_ext = phi0/2", params.beta)
    deepest = sorted(minima, key=lambda x: float(potential(x, params)))[:2]
    phi1, phi2 = sorted(deepest)
    between = [m for m in maxima if phi1 < m < phi2]
    saddle = max(between, key=lambda x: float(potential(x, params)))
    return phi1, phi2, saddle


def default_grid(params: SquidParams, n_points: int = 2001) -> FluxGrid:
    """Grid centered on the wells, half-width max(6 well separations, 10 oscillator lengths)."""
    try:
        phi1, phi2, _ = find_minima(params)
        center, sep = 0.5 * (phi1 + phi2), phi2 - phi1
    except NoDoubleWell:
        center, sep = params.phi_ext, 0.0
    half = max(6 * sep, 10 * params.oscillator_length)
    return FluxGrid(center - half, center + half, n_points)


def analyze_double_well(params: SquidParams, grid: FluxGrid | None = None,
                        k: int = 2) -> DoubleWellReport:
    phi1, phi2, saddle = find_minima(params)
    grid = default_grid(params) if grid is None else grid
    v1, v2 = float(potential(phi1, params)), float(potential(phi2, params))
    scale = max(params.josephson_energy, abs(v1), abs(v2), np.finfo(float).tiny)
    sol = eigensolve(build_hamiltonian(grid, params), max(k, 2))
    e1, e2 = (float(e) for e in sol.eigenvalues[:2])
    return DoubleWellReport(
        phi1=phi1, phi2=phi2, vbar=float(potential(saddle, params)) - min(v1, v2),
        E1=e1, E2=e2, splitting=e2 - e1,
        symmetric=abs(v1 - v2) < tolerances.current().symmetric_depth * scale,
        beta=params.beta, saddle=saddle, spectrum=sol)


def well_probabilities(psi: np.ndarray, grid: FluxGrid, divide: float | None = None):
    """(left, right) probability of a grid wave function, split at ``divide``.

    A grid point sitting exactly on the divide contributes half to each side.
    """
    divide = grid.center if divide is None else divide
    x = grid.points
    rho = np.abs(np.asarray(psi)) ** 2
    total = rho.sum()
    on = np.isclose(x, divide, rtol=0.0, atol=1e-12 * grid.h)
    left = rho[(x < divide) & ~on].sum() + 0.5 * rho[on].sum()
    return float(left / total), float(1.0 - left / total)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    frames: np.ndarray  # stored wave functions, one row per stored time
    norms: np.ndarray  # norm at every step, including t = 0
    grid: FluxGrid
    dt: float
    energy_shift: float

    @property
    def final(self) -> np.ndarray:
        return self.frames[-1]

    @property
    def norm_drift(self) -> float:
        return float(np.max(np.abs(self.norms - self.norms[0])))

    def well_series(self, divide: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Left-well probability at each stored time."""
        left = np.array([well_probabilities(f, self.grid, divide)[0] for f in self.frames])
        return self.times, left


def time_evolve(psi0: np.ndarray, H: Tridiagonal, t_final: float, dt: float, *,
                splitting: float | None = None, energy_shift: float | None = None,
                store_every: int | None = None) -> Trajectory:
    """Crank-Nicolson propagation of a full-grid wave function.

    The step count is ``ceil(t_final / dt)`` and the step is shrunk so the run
    ends exactly at ``t_final``. ``energy_shift`` (default <H> of the initial
    state) is subtracted from H; this changes only a global phase but keeps the
    scheme's phase error small for states near that energy. If ``splitting`` is
    given, the step must resolve it: ``dt < 0.01 hbar / splitting``.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (H.grid.n_points,):
        raise ValueError(f"psi0 must have {H.grid.n_points} grid values, got {psi0.shape}")
    if t_final < 0 or dt <= 0:
        raise ValueError("need t_final >= 0 and dt > 0")
    if splitting is not None and not dt < 0.01 * H.hbar / splitting:
        raise ValueError(f"dt = {dt:g} does not resolve the splitting {splitting:g}: "
                         f"need dt < {0.01 * H.hbar / splitting:g}")
    n_steps = max(1, math.ceil(t_final / dt - 1e-9)) if t_final > 0 else 0
    step = t_final / n_steps if n_steps else dt
    shift = H.expectation(psi0) if energy_shift is None else energy_shift
    store_every = store_every or max(1, n_steps // 1000)

    n = H.size
    h_shift = H.to_sparse() - shift * sparse.identity(n, format="csc")
    a = 0.5j * step / H.hbar * h_shift
    eye = sparse.identity(n, dtype=complex, format="csc")
    try:
        solver = splu((eye + a).tocsc())
    except RuntimeError as exc:
        raise NumericalError("Crank-Nicolson factorization failed", {"n": n, "dt": step}) from exc
    explicit = (eye - a).tocsr()

    v = psi0[1:-1].copy()
    norms = np.empty(n_steps + 1)
    norms[0] = np.linalg.norm(v)
    times, frames = [0.0], [psi0.copy()]
    for i in range(1, n_steps + 1):
        v = solver.solve(explicit @ v)
        norms[i] = np.linalg.norm(v)
        if i % store_every == 0 or i == n_steps:
            frame = np.zeros_like(psi0)
            frame[1:-1] = v
            times.append(i * step)
            frames.append(frame)
    if not np.all(np.isfinite(norms)):
        raise NumericalError("non-finite amplitudes during propagation", {"dt": step})
    return Trajectory(np.array(times), np.array(frames), norms, H.grid, step, shift)


def doublet_state(report: DoubleWellReport, side: str = "left") -> np.ndarray:
    """(v1 +/- v2)/sqrt(2) chosen to sit in the requested well."""
    v1, v2 = report.spectrum.eigenvectors[:2]
    grid = report.spectrum.grid
    divide = report.saddle
    plus = (v1 + v2) / math.sqrt(2)
    minus = (v1 - v2) / math.sqrt(2)
    left_plus = well_probabilities(plus, grid, divide)[0]
    left_minus = well_probabilities(minus, grid, divide)[0]
    pick_plus = left_plus >= left_minus if side == "left" else left_plus < left_minus
    return plus if pick_plus else minus


def tunneling_run(params: SquidParams, grid: FluxGrid | None = None, *,
                  steps_per_period: int = 2000, periods: float = 0.5) -> dict:
    """Start in the left well and evolve for ``periods`` tunneling periods 2 pi hbar / (E2 - E1)."""
    report = analyze_double_well(params, grid)
    psi0 = doublet_state(report, "left")
    period = 2 * math.pi * params.hbar / report.splitting
    dt = period / steps_per_period
    H = build_hamiltonian(report.spectrum.grid, params)
    traj = time_evolve(psi0, H, periods * period, dt, splitting=report.splitting)
    left0 = well_probabilities(psi0, traj.grid, report.saddle)[0]
    right_end = well_probabilities(traj.final, traj.grid, report.saddle)[1]
    return {"report": report, "trajectory": traj, "period": period,
            "left_initial": left0, "right_final": right_end, "norm_drift": traj.norm_drift}


SWEEP_VARIABLES = ("phi_ext", "critical_current", "beta")


def _sweep_row(args) -> dict:
    params, variable, value, n_points, half_width = args
    if variable == "beta":
        p = replace(params, critical_current=value * params.phi0
                    / (2 * math.pi * params.inductance))
    else:
        p = replace(params, **{variable: value})
    if half_width is None:
        grid = default_grid(p, n_points)
    else:
        c = 0.5 * params.phi0
        grid = FluxGrid(c - half_width, c + half_width, n_points)
    sol = eigensolve(build_hamiltonian(grid, p), 2)
    row = {variable: value, "beta": p.beta, "E1": float(sol.eigenvalues[0]),
           "E2": float(sol.eigenvalues[1])}
    row["splitting"] = row["E2"] - row["E1"]
    try:
        phi1, phi2, saddle = find_minima(p)
        vmin = min(float(potential(phi1, p)), float(potential(phi2, p)))
        row.update(phi1=phi1, phi2=phi2, vbar=float(potential(saddle, p)) - vmin)
    except NoDoubleWell:
        row.update(phi1=float("nan"), phi2=float("nan"), vbar=float("nan"))
    return row


def sweep(params: SquidParams, variable: str, values, *, n_points: int = 2001,
          half_width: float | None = None, jobs: int = 1) -> list[dict]:
    """Spectrum and well geometry along one parameter; rows come back in input order.

    With ``half_width`` every point uses the same grid centered on phi0/2,
    otherwise each point gets :func:`default_grid`.
    """
    if variable not in SWEEP_VARIABLES:
        raise ValueError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {variable!r}")
    tasks = [(params, variable, float(v), n_points, half_width) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_row, tasks))
    return [_sweep_row(t) for t in tasks]
