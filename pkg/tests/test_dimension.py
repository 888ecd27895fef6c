from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fractal_index.dimension import (blowup_search, default_basis, epsilon_rank, index_report, rank_spectrum,
                                     renormalization_matrix, renormalize_pair, renormalized_field)
from fractal_index.harmonic import harmonic_extension, preset_harmonic_structure
from fractal_index.measures import mutual_cell_measure, phi_field
from fractal_index.structure import preset

S = preset("sg2")
HS = preset_harmonic_structure(S)
BASIS = default_basis(S, HS)


def test_epsilon_rank_counts_relative_eigenvalues():
    ev = np.array([[1.9, 0.1], [2.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    assert epsilon_rank(ev, 0.01).tolist() == [2, 1, 2, 0]
    assert epsilon_rank(ev, 0.1).tolist() == [1, 1, 2, 0]


def test_rank_spectrum_histogram_is_a_distribution():
    rep = rank_spectrum(BASIS, 5, 0.01)
    assert sum(rep.histogram.values()) == pytest.approx(1.0)
    assert rep.max_rank == 2
    assert 0 < rep.mass_above < 1
    assert rep.mass_above == pytest.approx(sum(v for k, v in rep.histogram.items() if k >= 2))


def test_rank_spectrum_single_function():
    rep = rank_spectrum(BASIS[:1], 4, 0.01)
    assert rep.max_rank == 1 and rep.mass_above == 0.0


def test_rank_spectrum_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        rank_spectrum(BASIS, 2, 1.5)


def test_mass_above_decreases_with_level():
    ms = [rank_spectrum(BASIS, m, 0.01).mass_above for m in (2, 4, 6)]
    assert ms[0] > ms[1] > ms[2]


def test_renormalize_diagonal_example():
    h1, h2 = BASIS
    out = renormalize_pair([[Fraction(4), 0], [0, Fraction(1)]], [h1, h2])
    assert out[0].values == h1.scale(Fraction(1, 2)).values
    assert out[1].values == h2.values


def test_renormalize_rejects_non_pd():
    with pytest.raises(ValueError):
        renormalize_pair([[1.0, 2.0], [2.0, 1.0]], BASIS)
    with pytest.raises(ValueError):
        renormalization_matrix([[1.0, 0.5], [0.4, 1.0]])


spd_seeds = st.integers(0, 2**31 - 1)


@settings(max_examples=50, deadline=None)
@given(spd_seeds, st.integers(1, 4))
def test_renormalized_field_is_identity(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    L = A @ A.T + 0.1 * np.eye(d)
    L = d * L / np.trace(L)
    C, U, lam = renormalization_matrix(L)
    assert np.allclose(U.T @ L @ U, np.diag(lam), atol=1e-12)
    out = renormalized_field(np.broadcast_to(L, (5, d, d)), C)
    assert np.abs(out - np.eye(d)).max() < 1e-12


def test_renormalized_functions_follow_bilinearity():
    L = np.array([[1.2, -0.3], [-0.3, 0.8]])
    h = renormalize_pair(L, BASIS)
    C, _, _ = renormalization_matrix(L)
    m = 2
    base = {(i, j): mutual_cell_measure(BASIS[i], BASIS[j], m).to_float() for i in range(2) for j in range(2)}
    new00 = mutual_cell_measure(h[0], h[0], m).to_float()
    expect = sum(C[k, 0] * C[l, 0] * base[(k, l)] for k in range(2) for l in range(2))
    assert np.allclose(new00, expect, rtol=1e-12)


def test_blowup_single_function_is_trivial():
    tr = blowup_search(BASIS[:1], 0.1, max_level=3)
    assert tr.target == [[1.0]] and not tr.degenerate


def test_blowup_sg2_trace():
    tr = blowup_search(BASIS, 0.01, max_level=5)
    assert not tr.degenerate
    assert len(tr.steps) == 5
    assert all(len(st.word) == i + 1 for i, st in enumerate(tr.steps))
    assert all(tr.steps[i + 1].word.startswith(tr.steps[i].word) for i in range(4))
    L = np.array(tr.target)
    assert np.trace(L) == pytest.approx(2.0) and np.linalg.det(L) >= 0.01
    masses = [tr.candidate_mass[n] for n in sorted(tr.candidate_mass)]
    assert masses[0] == pytest.approx(1.0)
    assert masses[-1] < masses[0]


def test_blowup_degenerate_when_threshold_unreachable():
    tr = blowup_search(BASIS, 5.0, max_level=3)
    assert tr.degenerate and tr.failure_depth == 1


def test_index_report_sg2():
    rep = index_report(S, HS, BASIS, [4, 6, 8], [1e-2, 1e-3])
    assert rep["estimate"] == 1 and rep["stable_across_epsilon"]
    assert not rep["index_zero"]
    assert "not a proof" in rep["caveat"]
    assert rep["per_epsilon"]["0.01"]["max_rank_deepest"] == 2


def test_index_report_zero_for_constants():
    const = harmonic_extension(S, HS, [1, 1, 1], 0)
    rep = index_report(S, HS, [const], [2, 3], [0.01])
    assert rep["index_zero"] and rep["estimate"] == 0


def test_phi_field_changes_with_basis_but_trace_does_not():
    other = [harmonic_extension(S, HS, [1, -1, 0], 0), harmonic_extension(S, HS, [0, 1, -1], 0)]
    a, b = phi_field(BASIS, 3).to_float(), phi_field(other, 3).to_float()
    assert not np.allclose(a, b)
    assert np.allclose(np.trace(a, axis1=1, axis2=2), 2) and np.allclose(np.trace(b, axis1=1, axis2=2), 2)
