import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dense_fd_hamiltonian, squid_potential, two_level_rabi_right_probability
from statereduction.errors import BoundaryError, NoDoubleWell
from statereduction.squid import (HBAR_SI, FluxGrid, SquidParams, analyze_double_well,
                                  build_hamiltonian, default_grid, doublet_state, eigensolve,
                                  find_minima, potential, potential_derivative, sweep,
                                  time_evolve, tunneling_run, well_probabilities)

HARMONIC = SquidParams(critical_current=0.0)
HARMONIC_GRID = FluxGrid(-8.0, 8.0, 2001)
# Dense-eigensolver oracle on the same stencil (scipy.linalg.eigh of the full matrix)
FROZEN_HARMONIC = [0.4999979999940688, 1.4999899999289958, 2.499973999720341,
                   3.499949999272597, 4.499917998490256]
FROZEN_BETA12 = [0.4999737070404623, 1.4999267240445473]          # grid [-9.5, 10.5], 2001
FROZEN_TUNNEL = [0.035453418265529446, 0.035474701190600935]      # beta 2, C 1e4, [-2.5, 3.5]

TUNNEL = SquidParams.from_beta(2.0, capacitance=1e4)
TUNNEL_GRID = FluxGrid(-2.5, 3.5, 2001)


class TestPotential:
    def test_pure_quadratic(self):
        p = SquidParams(inductance=2.0, critical_current=0.0)
        x = np.linspace(-3, 3, 13)
        assert np.array_equal(potential(x, p), x ** 2 / 4.0)

    def test_origin(self):
        p = SquidParams(critical_current=0.7)
        assert potential(0.0, p) == pytest.approx(-0.7 / (2 * math.pi), abs=1e-16)

    @given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.1, 3))
    def test_symmetric_about_half_flux(self, delta, beta, L):
        p = SquidParams.from_beta(beta, 0.5, inductance=L)
        assert abs(potential(0.5 + delta, p) - potential(0.5 - delta, p)) < 1e-12 * max(1, delta ** 2 / L)

    @given(st.floats(-4, 4), st.floats(0, 2), st.floats(0.2, 3), st.floats(-1, 1))
    def test_independent_expression(self, phi, ic, L, ext):
        p = SquidParams(inductance=L, critical_current=ic, phi_ext=ext)
        ref = squid_potential(phi, L, ic, ext)
        assert abs(float(potential(phi, p)) - ref) <= 4 * np.finfo(float).eps * max(1, abs(ref) + ic)

    def test_derivative(self):
        p = SquidParams.from_beta(1.7, 0.43)
        x, h = np.linspace(-1, 2, 7), 1e-6
        fd = (potential(x + h, p) - potential(x - h, p)) / (2 * h)
        assert np.allclose(potential_derivative(x, p), fd, atol=1e-8)


class TestHamiltonian:
    def test_stencil(self):
        p = SquidParams(capacitance=2.0, critical_current=0.3, phi_ext=0.1)
        g = FluxGrid(-2.0, 2.0, 41)
        H = build_hamiltonian(g, p)
        assert np.allclose(H.diagonal, 1 / (2.0 * g.h ** 2) + potential(g.interior, p), rtol=0, atol=1e-12)
        assert np.all(H.offdiagonal == -1 / (2 * 2.0 * g.h ** 2))
        dense = H.to_dense()
        assert np.array_equal(dense, dense.T)
        ref = dense_fd_hamiltonian(g.interior, g.h, lambda x: squid_potential(x, 1.0, 0.3, 0.1),
                                   mass=2.0)
        assert np.allclose(dense, ref, atol=1e-10)

    def test_matvec_and_sparse(self):
        H = build_hamiltonian(FluxGrid(-1, 1, 9), SquidParams(critical_current=1.0))
        v = np.arange(7.0)
        assert np.allclose(H.matvec(v), H.to_dense() @ v)
        assert np.allclose(H.to_sparse().toarray(), H.to_dense())

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            FluxGrid(1.0, 0.0, 11)
        with pytest.raises(ValueError):
            FluxGrid(0.0, 1.0, 2)
        with pytest.raises(ValueError):
            SquidParams(capacitance=0.0)


class TestEigensolve:
    @pytest.mark.parametrize("n_points", [2000, 2001])
    def test_harmonic(self, n_points):
        sol = eigensolve(build_hamiltonian(FluxGrid(-8, 8, n_points), HARMONIC), 5)
        exact = np.arange(5) + 0.5
        assert np.max(np.abs(sol.eigenvalues - exact) / exact) < 1e-4

    def test_matches_dense_oracle(self):
        sol = eigensolve(build_hamiltonian(HARMONIC_GRID, HARMONIC), 5)
        assert np.allclose(sol.eigenvalues, FROZEN_HARMONIC, rtol=1e-11, atol=0)

    def test_box(self):
        g = FluxGrid(0.0, 1.0, 2001)
        sol = eigensolve(build_hamiltonian(g, SquidParams(inductance=1e30)), 3, check_edges=False)
        exact = math.pi ** 2 * np.arange(1, 4) ** 2 / 2
        assert np.max(np.abs(sol.eigenvalues - exact) / exact) < 1e-3

    def test_second_order_convergence(self):
        e1 = eigensolve(build_hamiltonian(HARMONIC_GRID, HARMONIC), 1).eigenvalues[0]
        e2 = eigensolve(build_hamiltonian(HARMONIC_GRID.refined(), HARMONIC), 1).eigenvalues[0]
        ratio = abs(e1 - 0.5) / abs(e2 - 0.5)
        assert 3.2 <= ratio <= 4.8

    def test_spectrum_invariants(self):
        sol = eigensolve(build_hamiltonian(HARMONIC_GRID, HARMONIC), 6)
        assert np.all(np.diff(sol.eigenvalues) > 0)
        v = sol.eigenvectors
        assert np.max(np.abs(v @ v.T - np.eye(6))) < 1e-8
        assert np.all(v[:, 0] == 0) and np.all(v[:, -1] == 0)
        assert sol.diagnostics["max_residual"] < 1e-8 * sol.diagnostics["residual_scale"]

    def test_edge_audit(self):
        with pytest.raises(BoundaryError) as info:
            eigensolve(build_hamiltonian(FluxGrid(-1, 1, 201), HARMONIC), 3)
        assert info.value.edge_amplitude > 1e-6

    def test_k_range(self):
        H = build_hamiltonian(FluxGrid(-1, 1, 11), HARMONIC)
        with pytest.raises(ValueError):
            eigensolve(H, 10)

    def test_shift_by_flux_quantum(self):
        # the cosine is periodic in phi0, so shifting grid and phi_ext by phi0 changes nothing
        p = SquidParams.from_beta(1.5, 0.5)
        g = default_grid(p)
        a = eigensolve(build_hamiltonian(g, p), 4).eigenvalues
        b = eigensolve(build_hamiltonian(g.shifted(1.0), SquidParams.from_beta(1.5, 1.5)), 4).eigenvalues
        assert np.max(np.abs(a - b) / np.abs(a)) < 1e-6


class TestDoubleWell:
    @pytest.fixture(scope="class")
    @classmethod
    def report(cls):
        return analyze_double_well(SquidParams.from_beta(1.2))

    def test_symmetric(self, report):
        assert report.symmetric
        assert abs(report.phi1 + report.phi2 - 1.0) < 1e-10
        assert report.phi1 < report.phi2 and report.vbar >= 0
        assert abs(report.saddle - 0.5) < 1e-12

    def test_stationary(self, report):
        p = SquidParams.from_beta(1.2)
        assert abs(potential_derivative(report.phi1, p)) < 1e-12
        assert abs(potential_derivative(report.phi2, p)) < 1e-12

    def test_parity(self, report):
        assert abs(report.spectrum.mirror_overlap(0) - 1) < 1e-6
        assert abs(report.spectrum.mirror_overlap(1) + 1) < 1e-6
        assert report.splitting > 0

    def test_against_dense_oracle(self, report):
        assert np.allclose([report.E1, report.E2], FROZEN_BETA12, rtol=1e-10, atol=0)

    def test_single_well(self):
        with pytest.raises(NoDoubleWell) as info:
            find_minima(SquidParams.from_beta(0.8))
        assert info.value.beta == pytest.approx(0.8)

    def test_asymmetric(self):
        rep = analyze_double_well(SquidParams.from_beta(2.0, 0.45))
        assert not rep.symmetric

    def test_splitting_shrinks_with_barrier(self):
        reps = [analyze_double_well(SquidParams.from_beta(b, capacitance=1e4))
                for b in (1.6, 1.8, 2.0, 2.2)]
        vbar = [r.vbar for r in reps]
        split = [r.splitting for r in reps]
        assert np.all(np.diff(vbar) > 0)
        assert np.all(np.diff(split) < 0)
        assert all(s > 0 for s in split)


class TestTimeEvolution:
    def test_eigenstate_is_stationary(self):
        H = build_hamiltonian(HARMONIC_GRID, HARMONIC)
        v = eigensolve(H, 1).eigenvectors[0]
        traj = time_evolve(v, H, 5.0, 0.01, store_every=50)
        rho0 = np.abs(v) ** 2
        for frame in traj.frames:
            assert 0.5 * np.sum(np.abs(np.abs(frame) ** 2 - rho0)) < 1e-8

    def test_norm_over_many_steps(self):
        H = build_hamiltonian(FluxGrid(-8, 8, 401), HARMONIC)
        x = H.grid.points
        psi = np.exp(-(x - 1.0) ** 2) * np.exp(0.5j * x)
        psi[[0, -1]] = 0
        psi /= np.linalg.norm(psi)
        traj = time_evolve(psi, H, 100.0, 0.01)
        assert len(traj.norms) == 10_001
        assert traj.norm_drift < 1e-10

    def test_tunneling_half_period(self):
        run = tunneling_run(TUNNEL, TUNNEL_GRID)
        assert run["left_initial"] > 0.99
        assert run["right_final"] > 0.99
        assert run["norm_drift"] < 1e-10
        rep = run["report"]
        assert np.allclose([rep.E1, rep.E2], FROZEN_TUNNEL, rtol=1e-10, atol=0)

    def test_two_level_oracle(self):
        run = tunneling_run(TUNNEL, TUNNEL_GRID, periods=1.0, steps_per_period=1000)
        rep = run["report"]
        times, left = run["trajectory"].well_series(rep.saddle)
        right_ideal = np.array([two_level_rabi_right_probability(t, rep.splitting) for t in times])
        # the doublet is not perfectly localized, so allow its leakage
        leak = 1 - run["left_initial"]
        assert np.max(np.abs((1 - left) - right_ideal)) < 2 * leak + 1e-3

    def test_step_must_resolve_splitting(self):
        H = build_hamiltonian(FluxGrid(-8, 8, 101), HARMONIC)
        psi = np.zeros(101)
        psi[50] = 1
        with pytest.raises(ValueError):
            time_evolve(psi, H, 1.0, 0.5, splitting=1.0)
        with pytest.raises(ValueError):
            time_evolve(psi[:-1], H, 1.0, 0.001)

    def test_doublet_sides(self):
        rep = analyze_double_well(TUNNEL, TUNNEL_GRID)
        left = doublet_state(rep, "left")
        right = doublet_state(rep, "right")
        assert well_probabilities(left, TUNNEL_GRID, rep.saddle)[0] > 0.99
        assert well_probabilities(right, TUNNEL_GRID, rep.saddle)[1] > 0.99


class TestUnitsAndSweeps:
    def test_si_harmonic_ground_energy(self):
        C, L = 1e-15, 1e-9
        p = SquidParams.from_si(C, L, 0.0, 0.0)
        sol = eigensolve(build_hamiltonian(default_grid(p), p), 1)
        expected = 0.5 * HBAR_SI / math.sqrt(L * C)
        assert p.energy_to_si(sol.eigenvalues[0]) == pytest.approx(expected, rel=1e-4)

    def test_si_beta_preserved(self):
        from statereduction.squid import PHI0_SI
        L, Ic = 1e-10, 5e-6
        p = SquidParams.from_si(1e-14, L, Ic, 0.5 * PHI0_SI)
        assert p.beta == pytest.approx(2 * math.pi * L * Ic / PHI0_SI, rel=1e-12)
        assert p.phi_ext == pytest.approx(0.5)
        with pytest.raises(ValueError):
            SquidParams.from_beta(1.2).energy_to_si(1.0)

    def test_external_flux_sweep(self):
        values = np.linspace(0.3, 0.7, 9)
        rows = sweep(TUNNEL, "phi_ext", values, half_width=3.0)
        split = [r["splitting"] for r in rows]
        assert int(np.argmin(split)) == 4
        assert np.allclose(split, split[::-1], rtol=1e-6)
        parallel = sweep(TUNNEL, "phi_ext", values, half_width=3.0, jobs=2)
        keys = sorted(rows[0])
        assert np.array_equal([[r[k] for k in keys] for r in rows],
                              [[r[k] for k in keys] for r in parallel], equal_nan=True)

    def test_sweep_variable(self):
        with pytest.raises(ValueError):
            sweep(TUNNEL, "temperature", [1.0])
        rows = sweep(SquidParams.from_beta(1.0), "beta", [0.5, 1.5])
        assert math.isnan(rows[0]["phi1"]) and not math.isnan(rows[1]["phi1"])
