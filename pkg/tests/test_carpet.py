import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fractal_index.carpet import (CarpetGenerator, PreCarpetGraph, build_pre_carpet, carpet_from_config,
                                  carpet_preset, check_all, check_borders, check_connectedness,
                                  check_nondiagonality, check_nondiagonality_rectangles, check_symmetry,
                                  dimension_report, effective_resistance, resistance_scaling, x1_faces)
from fractal_index.harmonic import ConvergenceError
from fractal_index.structure import StructureError

from carpet_gen import mutate, random_symmetric_cells
from oracles import (oracle_borders, oracle_connected, oracle_nd, oracle_pre_carpet_edges, oracle_resistance,
                     oracle_symmetric)

C2 = carpet_preset("carpet2d")
C3 = carpet_preset("carpet3d")


def gen(cells, D=2, l=3, **kw):
    return CarpetGenerator.create(D, l, cells, **kw)


def test_presets_pass_all_checks():
    assert C2.M == 8 and C3.M == 20
    for g in (C2, C3):
        assert all(check_all(g).values())


def test_check_examples():
    no_corner = [c for c in C2.cells if c != (0, 0)]
    assert not check_symmetry(gen(no_corner))
    full = gen(list(itertools.product(range(3), repeat=2)), allow_full=True)
    assert check_symmetry(full)
    diag = gen([(0, 0), (1, 1)])
    assert not check_connectedness(diag)
    assert not check_nondiagonality(diag)
    row = gen([(0, 0), (1, 0), (2, 0)])
    assert check_connectedness(row)
    assert check_borders(row)
    assert not check_borders(gen([c for c in C2.cells if c != (1, 0)]))


def test_generator_validation():
    with pytest.raises(StructureError):
        gen(list(itertools.product(range(3), repeat=2)))
    with pytest.raises(StructureError):
        gen([(0, 0)])
    with pytest.raises(StructureError):
        gen([(0, 0), (3, 0)])
    with pytest.raises(StructureError):
        CarpetGenerator.create(2, 2, [(0, 0), (1, 0)])
    assert carpet_from_config({"D": 2, "l": 3, "cells": C2.cells}).cells == C2.cells
    with pytest.raises(StructureError):
        carpet_from_config({"D": 2})


def _oracle_all(cells, D, l):
    return {
        "symmetry": oracle_symmetric(cells, D, l),
        "connectedness": oracle_connected(cells, D, l),
        "nondiagonality": oracle_nd(cells, D, l, levels=(1, 2, 3)),
        "borders": oracle_borders(cells, D, l),
    }


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([3, 4]))
def test_checks_match_raster_oracles(seed, l):
    rng = np.random.default_rng(seed)
    cells = mutate(rng, random_symmetric_cells(rng, 2, l), 2, l)
    if len(cells) >= l * l:
        return
    g = gen(cells, l=l)
    got = check_all(g)
    assert {k: got[k] for k in ("symmetry", "connectedness", "nondiagonality", "borders")} == _oracle_all(cells, 2, l)


def test_three_dimensional_checks_match_oracles():
    rng = np.random.default_rng(7)
    for _ in range(5):
        cells = mutate(rng, C3.cells, 3, 3)
        got = check_all(gen(cells, D=3))
        assert got["symmetry"] == oracle_symmetric(cells, 3, 3)
        assert got["connectedness"] == oracle_connected(cells, 3, 3)
        assert got["borders"] == oracle_borders(cells, 3, 3)
        assert got["nondiagonality"] == oracle_nd(cells, 3, 3, levels=(1, 2))


def test_rectangle_form_agrees_on_presets_and_diagonal():
    assert check_nondiagonality_rectangles(C2)
    assert not check_nondiagonality_rectangles(gen([(0, 0), (1, 1)]))


def test_pre_carpet_small_levels():
    g1 = build_pre_carpet(C2, 1)
    assert g1.n_vertices == 8 and len(g1.edges) == 8
    g2 = build_pre_carpet(C2, 2)
    assert g2.n_vertices == 64
    coords, edges = oracle_pre_carpet_edges(C2.cells, 2, 3, 2)
    assert [tuple(c) for c in g2.coords.tolist()] == coords
    assert set(map(tuple, g2.edges.tolist())) == edges
    assert g2.degrees().max() <= 4


def test_pre_carpet_refuses_invalid_or_large():
    with pytest.raises(StructureError):
        build_pre_carpet(gen([(0, 0), (1, 0), (2, 0)]), 1)
    with pytest.raises(MemoryError):
        build_pre_carpet(C2, 8)
    with pytest.raises(MemoryError):
        build_pre_carpet(C3, 3, cap=1000)


def test_single_edge_resistance():
    g = PreCarpetGraph(1, 2, 2, np.array([[0, 0], [1, 0]]), np.array([[0, 1]]))
    assert effective_resistance(g, [0], [1]) == pytest.approx(1.0, abs=1e-12)


def test_ring_resistance_matches_exact_solve():
    g = build_pre_carpet(C2, 1)
    a, b = x1_faces(g)
    assert len(a) == len(b) == 3
    exact = oracle_resistance(g.n_vertices, g.edges.tolist(), a.tolist(), b.tolist())
    assert exact == 1
    assert effective_resistance(g, a, b) == pytest.approx(float(exact), abs=1e-8)


def test_level_two_resistance_matches_exact_solve():
    g = build_pre_carpet(C2, 2)
    a, b = x1_faces(g)
    exact = float(oracle_resistance(g.n_vertices, g.edges.tolist(), a.tolist(), b.tolist()))
    assert effective_resistance(g, a, b) == pytest.approx(exact, rel=1e-8)


@pytest.mark.parametrize("g,n", [(C2, 3), (C3, 2)])
def test_resistance_is_symmetric(g, n):
    graph = build_pre_carpet(g, n)
    R0 = effective_resistance(graph, *x1_faces(graph, 0))
    R1 = effective_resistance(graph, *x1_faces(graph, 1))
    assert R0 == pytest.approx(R1, rel=1e-8)


def test_resistance_monotone_under_edge_removal():
    graph = build_pre_carpet(C2, 3)
    a, b = x1_faces(graph)
    R = effective_resistance(graph, a, b)
    rng = np.random.default_rng(3)
    for _ in range(5):
        keep = np.ones(len(graph.edges), dtype=bool)
        keep[rng.choice(len(graph.edges), size=3, replace=False)] = False
        sub = PreCarpetGraph(graph.level, graph.D, graph.side, graph.coords, graph.edges[keep])
        try:
            R_sub = effective_resistance(sub, a, b)
        except ConvergenceError:
            continue  # removal isolated a vertex
        assert R_sub >= R - 1e-9


def test_resistance_rejects_bad_faces():
    graph = build_pre_carpet(C2, 1)
    with pytest.raises(ValueError):
        effective_resistance(graph, [], [1])
    with pytest.raises(ValueError):
        effective_resistance(graph, [0], [0])


def test_resistance_scaling_2d_trend():
    sc = resistance_scaling(C2, 1, 4)
    assert all(r > 1 for r in sc.ratios)
    assert sc.r_hat == pytest.approx(1 / sc.ratios[-1])
    assert 1.15 <= sc.ratios[-1] <= 1.35
    with pytest.raises(ValueError):
        resistance_scaling(C2, 2, 2)


def test_full_grid_ratio_tends_to_one():
    full = gen(list(itertools.product(range(3), repeat=2)), allow_full=True)
    sc = resistance_scaling(full, 1, 3, skip_checks=True)
    # R_n = (3^n - 1) / 3^n exactly for the full lattice
    for n, R in zip(sc.levels, sc.resistances):
        assert R == pytest.approx((3**n - 1) / 3**n, rel=1e-9)
    assert abs(sc.ratios[-1] - 1) < abs(sc.ratios[0] - 1)


def test_dimension_report_formulas():
    rep = dimension_report(C2, 0.8)
    assert rep.d_H == pytest.approx(np.log(8) / np.log(3))
    assert rep.d_s == pytest.approx(2 * np.log(8) / np.log(10), rel=1e-12)
    assert rep.d_s < 2 and rep.d_m_bound == 1 and rep.regular
    assert "without a quantified error bound" in rep.caveat
    with pytest.raises(ValueError):
        dimension_report(C2, 0.0)
    with pytest.raises(ValueError):
        dimension_report(C2, float("nan"))


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.13, max_value=5.0))
def test_dimension_identity_and_bounds(r):
    rep = dimension_report(C2, r)
    assert rep.identity_residual < 1e-12
    assert rep.d_s > 1
    assert 1 <= rep.d_m_bound <= max(1, rep.d_s)


def test_dimension_bound_branches():
    # r = 1 gives d_s = 2 exactly
    assert dimension_report(C3, 1.0).d_m_bound == 2
    rep = dimension_report(C3, 1.76)
    assert 2 < rep.d_s < 3 and rep.d_m_bound == 2 and not rep.regular
