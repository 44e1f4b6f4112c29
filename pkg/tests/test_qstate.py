import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import kron_loops, partial_trace_loops, trace_norm_distance
from statereduction import tolerances
from statereduction.errors import ContractViolation, InvalidStateError, LayoutError
from statereduction.qstate import (OperatorMatrix, SpaceLayout, StateOperator, StateVector, basis,
                                   embed, evolve, identity, partial_trace, random_density,
                                   random_state, random_unitary, tensor, trace_distance,
                                   unitarity_error)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 6)

# tr(A (x) B) for default_rng(5) draws, from the explicit-loop Kronecker oracle
FROZEN_TRACE_AB = 1.129908220149047 + 0.856132875836115j


def _rand_op(rng, d):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


class TestTensor:
    def test_identities(self):
        out = tensor(identity(2), identity(3))
        assert np.array_equal(out.entries, np.eye(6))

    def test_basis_bookkeeping(self):
        out = tensor(StateVector([1, 0]), StateVector([0, 1]))
        assert np.array_equal(out.amplitudes, [0, 1, 0, 0])

    def test_trace_factorizes(self):
        rng = np.random.default_rng(5)
        a, b = _rand_op(rng, 2), _rand_op(rng, 2)
        out = tensor(OperatorMatrix(a), OperatorMatrix(b))
        assert abs(out.trace() - np.trace(a) * np.trace(b)) < 1e-12
        assert abs(out.trace() - FROZEN_TRACE_AB) < 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = _rand_op(rng, 3), _rand_op(rng, 2)
        assert np.allclose(tensor(OperatorMatrix(a), OperatorMatrix(b)).entries,
                           kron_loops(a, b), atol=1e-14)

    def test_kind_of_result(self):
        rho = random_density(2, 0)
        assert isinstance(tensor(rho, rho), StateOperator)
        assert type(tensor(rho, identity(2))) is OperatorMatrix
        with pytest.raises(TypeError):
            tensor(StateVector([1, 0]), identity(2))

    @given(seeds, st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
    def test_associative(self, seed, d1, d2, d3):
        rng = np.random.default_rng(seed)
        # Gaussian-integer entries: every product is exact, so equality is exact too
        ints = [OperatorMatrix(rng.integers(-9, 10, (d, d)) + 1j * rng.integers(-9, 10, (d, d)))
                for d in (d1, d2, d3)]
        a, b, c = ints
        assert np.array_equal(tensor(tensor(a, b), c).entries, tensor(a, tensor(b, c)).entries)
        a, b, c = (OperatorMatrix(_rand_op(rng, d)) for d in (d1, d2, d3))
        left, right = tensor(tensor(a, b), c).entries, tensor(a, tensor(b, c)).entries
        assert np.max(np.abs(left - right)) <= 1e-14 * max(1.0, np.max(np.abs(left)))


class TestPartialTrace:
    def test_product_state(self):
        ra, rb = random_density(2, 1), random_density(3, 2)
        lay = SpaceLayout((2, 3), ("a", "b"))
        out = partial_trace(tensor(ra, rb), lay, ["a"])
        assert np.max(np.abs(out.entries - ra.entries)) < 1e-12

    @pytest.mark.parametrize("keep", [0, 1])
    def test_bell_marginal(self, keep):
        psi = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2))
        out = partial_trace(psi.projector(), SpaceLayout((2, 2)), [keep])
        assert np.max(np.abs(out.entries - np.eye(2) / 2)) < 1e-15

    def test_trace_and_loop_oracle(self):
        rho = random_density(4, 9)
        lay = SpaceLayout((2, 2))
        for keep, tag in ((0, "A"), (1, "B")):
            out = partial_trace(rho, lay, [keep])
            assert abs(out.trace() - 1) < 1e-12
            assert np.allclose(out.entries, partial_trace_loops(rho.entries, 2, 2, tag), atol=1e-14)

    def test_three_factor_middle(self):
        rs = [random_density(d, s) for d, s in ((2, 0), (3, 1), (2, 2))]
        lay = SpaceLayout((2, 3, 2), ("x", "y", "z"))
        out = partial_trace(tensor(*rs), lay, ["x", "z"])
        assert np.allclose(out.entries, np.kron(rs[0].entries, rs[2].entries), atol=1e-14)

    def test_layout_mismatch(self):
        with pytest.raises(LayoutError):
            partial_trace(random_density(4, 0), SpaceLayout((2, 3)), [0])
        with pytest.raises(LayoutError):
            partial_trace(random_density(4, 0), SpaceLayout((2, 2)), [])

    @given(seeds, st.integers(1, 3), st.integers(1, 3))
    def test_recovers_factors(self, seed, da, db):
        ra, rb = random_density(da, seed), random_density(db, seed + 1)
        lay = SpaceLayout((da, db))
        assert np.max(np.abs(partial_trace(tensor(ra, rb), lay, [0]).entries - ra.entries)) < 1e-12
        assert np.max(np.abs(partial_trace(tensor(ra, rb), lay, [1]).entries - rb.entries)) < 1e-12


class TestEvolve:
    def test_identity(self):
        rho = random_density(3, 4)
        assert np.allclose(evolve(identity(3), rho).entries, rho.entries, atol=0)

    def test_bit_flip(self):
        x = OperatorMatrix([[0, 1], [1, 0]])
        out = evolve(x, basis(2, 0).projector())
        assert np.array_equal(out.entries, np.diag([0, 1]))

    def test_spectrum_preserved(self):
        rho = random_density(4, 12)
        out = evolve(random_unitary(4, 3), rho)
        assert np.max(np.abs(np.linalg.eigvalsh(out.entries) - np.linalg.eigvalsh(rho.entries))) < 1e-9
        assert abs(out.trace() - 1) < 1e-10

    def test_non_unitary_rejected(self):
        with pytest.raises(ContractViolation):
            evolve(OperatorMatrix(np.diag([1.0, 0.5])), random_density(2, 0))

    @given(seeds, st.integers(1, 5))
    def test_composition(self, seed, d):
        u, v = random_unitary(d, seed), random_unitary(d, seed + 1)
        rho = random_density(d, seed + 2)
        two = evolve(v, evolve(u, rho)).entries
        one = evolve(v.entries @ u.entries, rho).entries
        assert np.max(np.abs(two - one)) < 1e-10


class TestTraceDistance:
    def test_zero_and_one(self):
        rho = random_density(3, 0)
        assert trace_distance(rho, rho) == 0
        assert abs(trace_distance(basis(2, 0).projector(), basis(2, 1).projector()) - 1) < 1e-15

    def test_against_singular_value_oracle(self):
        a, b = random_density(5, 1), random_density(5, 2)
        d = trace_distance(a, b)
        assert -1e-12 <= d <= 1 + 1e-12
        assert abs(d - trace_norm_distance(a.entries, b.entries)) < 1e-12
        assert d == pytest.approx(trace_distance(b, a), abs=1e-15)

    @given(seeds, st.integers(1, 5))
    def test_triangle(self, seed, d):
        a, b, c = (random_density(d, seed + i) for i in range(3))
        assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-10


class TestGenerators:
    def test_deterministic(self):
        assert np.array_equal(random_state(8, 3).amplitudes, random_state(8, 3).amplitudes)
        assert np.array_equal(random_unitary(4, 3).entries, random_unitary(4, 3).entries)

    @given(seeds, dims)
    def test_unitary_and_normalized(self, seed, d):
        assert unitarity_error(random_unitary(d, seed)) < 1e-10
        assert abs(random_state(d, seed).norm - 1) < 1e-12

    @given(seeds, dims)
    def test_normalize(self, seed, d):
        v = StateVector(3.7 * random_state(d, seed).amplitudes)
        assert abs(v.normalize().norm - 1) < 1e-12


class TestStateOperator:
    def test_rejects_invalid(self):
        with pytest.raises(InvalidStateError):
            StateOperator(np.diag([0.5, 0.6]))
        with pytest.raises(InvalidStateError):
            StateOperator(np.diag([1.2, -0.2]))
        with pytest.raises(InvalidStateError):
            StateOperator(np.array([[0.5, 0.1], [0.2, 0.5]]))

    def test_tolerance_override(self):
        loose = tolerances.DEFAULT.replace(trace=0.2)
        with tolerances.using(loose):
            StateOperator(np.diag([0.5, 0.6]))
        with pytest.raises(KeyError):
            tolerances.DEFAULT.replace(nonsense=1.0)

    def test_immutable(self):
        rho = random_density(2, 0)
        with pytest.raises(ValueError):
            rho.entries[0, 0] = 2

    def test_embed(self):
        lay = SpaceLayout((2, 3, 2), ("a", "b", "c"))
        z = np.diag([1.0, -1.0])
        full = embed(z, lay, "c").entries
        assert np.allclose(full, np.kron(np.eye(6), z))
        swapped = embed(np.kron(z, np.eye(2)), lay, ["c", "a"]).entries
        assert np.allclose(swapped, np.kron(np.kron(np.eye(2), np.eye(3)), z))
