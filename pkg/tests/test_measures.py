from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fractal_index.harmonic import energy, harmonic_extension, mutual_energy, preset_harmonic_structure
from fractal_index.measures import (cell_energy_measure, derivation_check, kusuoka_table, mutual_cell_measure,
                                    phi_eigenvalues, phi_field)
from fractal_index.structure import preset

from oracles import gasket_cell_masses, gasket_dirichlet

rationals = st.fractions(min_value=-4, max_value=4, max_denominator=9)
vec3 = st.lists(rationals, min_size=3, max_size=3)


def setup(name):
    s = preset(name)
    return s, preset_harmonic_structure(s)


SG2 = setup("sg2")
SG3 = setup("sg3")


def ext(u, which=SG2, m=0):
    s, hs = which
    return harmonic_extension(s, hs, u, m)


def test_sg2_level_one_masses():
    t = cell_energy_measure(ext([1, 0, 0]), 1)
    assert t.values() == [Fraction(12, 5), Fraction(4, 5), Fraction(4, 5)]
    assert t.total() == 4 == 2 * energy(ext([1, 0, 0]))
    assert t["0"] == Fraction(12, 5)


@pytest.mark.parametrize("which,n,m", [(SG2, 2, 3), (SG3, 3, 2)])
def test_masses_match_geometric_oracle(which, n, m):
    u = [Fraction(2, 3), Fraction(-1, 4), Fraction(5)]
    oracle_vals = gasket_dirichlet(n, m, which[1].r[0], u)
    expect = gasket_cell_masses(oracle_vals, n, m, which[1].r[0])
    assert cell_energy_measure(ext(u, which), m).values() == expect


@settings(max_examples=20, deadline=None)
@given(vec3, st.integers(1, 5))
def test_child_sums_and_total(u, m):
    f = ext(u)
    t = cell_energy_measure(f, m)
    assert t.coarsen(1).equals(cell_energy_measure(f, m - 1))
    assert t.total() == 2 * energy(f)
    assert t.nonnegative()


@settings(max_examples=20, deadline=None)
@given(vec3, vec3, st.integers(1, 4))
def test_mutual_measure_polarisation_and_inequalities(u, v, m):
    f, g = ext(u), ext(v)
    nf, ng = cell_energy_measure(f, m).values(), cell_energy_measure(g, m).values()
    nfg = cell_energy_measure(f + g, m).values()
    mutual = mutual_cell_measure(f, g, m).values()
    assert sum(mutual) == 2 * mutual_energy(f, g)
    for a, b, c, x in zip(nf, ng, nfg, mutual):
        assert x == (c - a - b) / 2
        assert x * x <= a * b
        y = c - a - b  # triangle inequality in squared form
        assert y <= 0 or y * y <= 4 * a * b


def test_kusuoka_is_mean_of_diagonals():
    fs = [ext([1, 0, 0]), ext([0, 1, 0])]
    k = kusuoka_table(fs, 3).values()
    a, b = (cell_energy_measure(f, 3).values() for f in fs)
    assert k == [(x + y) / 2 for x, y in zip(a, b)]


@pytest.mark.parametrize("which", [SG2, SG3])
def test_phi_trace_is_d_exactly(which):
    fs = [ext([1, 0, 0], which), ext([0, 1, 0], which)]
    phi = phi_field(fs, 3)
    for k in range(len(phi)):
        mat = phi.matrix_at(k)
        assert mat[0][0] + mat[1][1] == 2
        assert mat[0][1] == mat[1][0]


def test_phi_entries_are_measure_ratios():
    f, g = ext([1, 0, 0]), ext([0, 1, 0])
    phi = phi_field([f, g], 2)
    nf, ng = cell_energy_measure(f, 2), cell_energy_measure(g, 2)
    nfg = mutual_cell_measure(f, g, 2)
    for w in nf.words():
        kus = (nf[w] + ng[w]) / 2
        assert phi[w] == [[nf[w] / kus, nfg[w] / kus], [nfg[w] / kus, ng[w] / kus]]


def test_zero_mass_cells_get_zero_matrix():
    # constant function plus a function vanishing on some cells
    f = ext([1, 1, 1])
    phi = phi_field([f], 2)
    assert not phi.defined.any()
    assert phi.matrix_at(0) == [[0]]


@pytest.mark.parametrize("d", [2, 3])
def test_eigenvalues_match_numpy(d):
    basis = [[1, 0, 0], [0, 1, 0], [Fraction(1, 3), Fraction(1, 2), 0]][:d]
    fs = [ext(u) for u in basis]
    phi = phi_field(fs, 4)
    ev = phi_eigenvalues(phi)
    ref = np.sort(np.linalg.eigvalsh(phi.to_float()), axis=1)[:, ::-1]
    assert np.allclose(ev, ref, atol=1e-10)
    assert (ev[:, :-1] >= ev[:, 1:] - 1e-12).all()
    assert np.allclose(ev.sum(axis=1), d)


def test_derivation_check_improves_with_level():
    f = ext([1, 0, 0])
    rel = [derivation_check(f, m)["max_relative"] for m in (3, 5, 7)]
    assert rel[0] > rel[1] > rel[2]
