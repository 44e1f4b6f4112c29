import numpy as np
import pytest

from statereduction.qstate import SpaceLayout, unitarity_error
from statereduction.screens import absorption_permutation, build_screen, random_screen
from statereduction.symmetry import IdenticalGroup, permutation_operator


@pytest.mark.parametrize("modes", [1, 2])
def test_absorption_is_an_involution(modes):
    u = absorption_permutation(modes)
    assert np.array_equal(u @ u, np.eye(u.shape[0]))
    assert set(np.unique(u)) <= {0, 1}


@pytest.mark.parametrize("builder", ["screen", "scatter"])
def test_coupling_commutes_with_exchange(builder):
    sc = build_screen(0.6, 0.8, builder=builder, seed=5)
    swap = permutation_operator(sc.layout, IdenticalGroup((0, 1)), (1, 0)).entries
    u = sc.coupling.entries
    assert unitarity_error(u) < 1e-12
    assert np.max(np.abs(swap @ u - u @ swap)) < 1e-12


def test_layout_and_metadata():
    sc = build_screen(0.6, 0.8, modes=1, statistics="bosonic", seed=2)
    assert sc.layout == SpaceLayout((4, 4, 2), ("system", "twin", "pointer"))
    assert sc.metadata["reduction_site"]
    assert sc.decomposition.absorbed_flags == (False, True)


def test_statistics_none_has_no_projector():
    assert build_screen(0.6, 0.8, statistics=None).projector is None


def test_bad_arguments():
    with pytest.raises(ValueError):
        build_screen(0.6, 0.8, builder="mirror")
    with pytest.raises(ValueError):
        build_screen(0.6, 0.8, modes=0)


def test_random_screen_is_seeded():
    a, b = random_screen(9), random_screen(9)
    assert np.array_equal(a.coupling.entries, b.coupling.entries)
    assert a.decomposition.coeffs == b.decomposition.coeffs
