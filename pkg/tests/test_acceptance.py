"""The ten acceptance criteria, one test each, at their stated tolerances.

Each test records a one-line verdict that the conftest prints after the run.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from fractal_index.carpet import (CarpetGenerator, carpet_preset, check_all, check_nondiagonality,
                                  dimension_report, resistance_scaling)
from fractal_index.dimension import default_basis, rank_spectrum, renormalization_matrix, renormalized_field
from fractal_index.harmonic import (assemble_graph_form, energy, harmonic_extension, mutual_energy,
                                    preset_harmonic_structure, pullback, refine, trace_form)
from fractal_index.measures import cell_energy_measure, mutual_cell_measure, phi_field
from fractal_index.structure import index_word, preset

from carpet_gen import mutate, random_symmetric_cells
from oracles import (gasket_cell_masses, gasket_dirichlet, gasket_energy, oracle_borders, oracle_connected,
                     oracle_nd, oracle_symmetric)


def verdict(record_property, n, title, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(line)
    record_property("acceptance", line)
    assert ok, line


def structures():
    out = {}
    for name in ("sg2", "sg3"):
        s = preset(name)
        out[name] = (s, preset_harmonic_structure(s))
    return out


def random_vectors(rng, k, n0=3):
    return [[Fraction(int(rng.integers(-50, 51)), int(rng.integers(1, 30))) for _ in range(n0)] for _ in range(k)]


def test_01_harmonic_fixed_point(record_property):
    t0 = time.perf_counter()
    s = preset("sg2")
    hs = preset_harmonic_structure(s)
    traced = trace_form(assemble_graph_form(s, hs, 1), [0, 1, 2]).dense()
    e0 = [[-x for x in row] for row in hs.D]
    elapsed = time.perf_counter() - t0
    ok = hs.r == (Fraction(3, 5),) * 3 and traced == e0 and elapsed < 1.0
    verdict(record_property, 1, "SG2 trace of E^(1) equals E^(0)", ok,
            f"exact equality {traced == e0}, r = 3/5, {elapsed:.3f} s")


def test_02_mass_and_child_sums(record_property):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    failures = []
    for name, (s, hs) in structures().items():
        for u in random_vectors(rng, 50):
            f = harmonic_extension(s, hs, u, 0)
            top = cell_energy_measure(f, 8)
            if top.total() != 2 * energy(f):
                failures.append((name, u, "total"))
            table = top
            for m in range(8, 0, -1):
                coarse = cell_energy_measure(f, m - 1) if m - 1 < 8 else top
                if not table.coarsen(1).equals(coarse):
                    failures.append((name, u, m))
                    break
                table = coarse
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 30
    verdict(record_property, 2, "total mass 2E(f) and child sums, SG2 and SG3, m <= 8", ok,
            f"100 vectors, {len(failures)} mismatches, {elapsed:.1f} s")


def test_03_worked_sg2_values(record_property):
    t0 = time.perf_counter()
    r = Fraction(3, 5)
    oracle = gasket_dirichlet(2, 1, r, [1, 0, 0])
    mids = sorted(v for p, v in oracle.items() if p not in [(0, 0), (1, 0), (0, 1)])
    oracle_masses = gasket_cell_masses(oracle, 2, 1, r)
    oracle_e = gasket_energy(oracle, 2, 1, r)
    s = preset("sg2")
    hs = preset_harmonic_structure(s)
    f = harmonic_extension(s, hs, [1, 0, 0], 1)
    masses = cell_energy_measure(f, 1).values()
    elapsed = time.perf_counter() - t0
    expected_mids = [Fraction(1, 5), Fraction(2, 5), Fraction(2, 5)]
    ok = (mids == expected_mids and sorted(f.values[3:]) == expected_mids
          and oracle_e == energy(f) == 2
          and masses == oracle_masses == [Fraction(12, 5), Fraction(4, 5), Fraction(4, 5)]
          and elapsed < 1.0)
    verdict(record_property, 3, "SG2 extension of (1,0,0)", ok,
            f"midpoints {[str(x) for x in f.values[3:]]}, E = {energy(f)}, "
            f"masses {[str(x) for x in masses]}, {elapsed:.3f} s")


def test_04_cellwise_inequalities(record_property):
    rng = np.random.default_rng(4)
    s, hs = structures()["sg2"]
    violations = 0
    m = 6
    for _ in range(100):
        u, v = random_vectors(rng, 2)
        f, g = harmonic_extension(s, hs, u, 0), harmonic_extension(s, hs, v, 0)
        nf = cell_energy_measure(f, m).values()
        ng = cell_energy_measure(g, m).values()
        nsum = cell_energy_measure(f + g, m).values()
        nfg = mutual_cell_measure(f, g, m).values()
        for a, b, c, x in zip(nf, ng, nsum, nfg):
            if x * x > a * b:
                violations += 1
            y = c - a - b
            if y > 0 and y * y > 4 * a * b:
                violations += 1
    verdict(record_property, 4, "cellwise Cauchy-Schwarz and triangle inequalities", violations == 0,
            f"100 pairs x {3 ** m} cells, {violations} violations")


def test_05_pullback_identity(record_property):
    s, hs = structures()["sg2"]
    total_level = 6
    basis = [refine(h, 5) for h in default_basis(s, hs)]
    big = phi_field(basis, total_level)
    mismatched, checked = [], 0
    for k in range(1, 6):
        for idx in range(3 ** k):
            w = index_word(idx, k, 3)
            pulled = [pullback(h, w) for h in basis]
            small = phi_field(pulled, total_level - k)
            if not big.sub_field(w).cellwise_equals(small).all():
                mismatched.append(w)
            checked += 1
    verdict(record_property, 5, "cell ratio field commutes with pullback, SG2, d = 2", not mismatched,
            f"{checked} words of length 1..5, {len(mismatched)} mismatches")


def test_06_index_one_witness(record_property):
    t0 = time.perf_counter()
    s, hs = structures()["sg2"]
    basis = default_basis(s, hs)
    levels = [4, 6, 8, 10]
    masses = [rank_spectrum(basis, m, 0.01).mass_above for m in levels]
    elapsed = time.perf_counter() - t0
    decreasing = all(b < a for a, b in zip(masses, masses[1:]))
    ok = decreasing and masses[-1] < 0.5 * masses[0] and elapsed < 120
    verdict(record_property, 6, "mass(lambda2/lambda1 > 0.01) decays on SG2", ok,
            "masses " + ", ".join(f"m={m}: {x:.5f}" for m, x in zip(levels, masses)) + f", {elapsed:.1f} s")


def test_07_trace_normalisation(record_property):
    bad, cells = 0, 0
    for name, (s, hs) in structures().items():
        basis = default_basis(s, hs)
        d = len(basis)
        for m in range(0, 7):
            phi = phi_field(basis, m)
            gram = phi.gram.to_object()
            trace = phi.trace.to_object()
            kus = phi.kusuoka.values()
            for k in range(len(phi)):
                if kus[k] > 0:
                    cells += 1
                    t = int(trace[k])
                    if t == 0 or sum(Fraction(d * int(gram[k, i, i]), t) for i in range(d)) != d:
                        bad += 1
    verdict(record_property, 7, "trace of the cell ratio matrix equals d", bad == 0,
            f"SG2 and SG3 levels 0..6, {cells} cells with positive mass, {bad} failures "
            "(pentagasket has no rational harmonic structure)")


def _frame4():
    cells = [(i, j) for i in range(4) for j in range(4) if i in (0, 3) or j in (0, 3)]
    return CarpetGenerator.create(2, 4, cells, "frame4")


def test_08_carpet_validation(record_property):
    t0 = time.perf_counter()
    standard = carpet_preset("carpet2d")
    std_ok = all(v for k, v in check_all(standard).items())
    rng = np.random.default_rng(8)
    bases = [standard, _frame4(), carpet_preset("carpet3d")]
    misclassified = 0
    for i in range(20):
        base = bases[i % len(bases)]
        cells = mutate(rng, base.cells, base.D, base.l)
        g = CarpetGenerator.create(base.D, base.l, cells, allow_full=True)
        got = check_all(g)
        want = {
            "symmetry": oracle_symmetric(cells, g.D, g.l),
            "connectedness": oracle_connected(cells, g.D, g.l),
            "nondiagonality": oracle_nd(cells, g.D, g.l, levels=(1, 2, 3) if g.D == 2 else (1, 2)),
            "borders": oracle_borders(cells, g.D, g.l),
        }
        misclassified += any(got[k] != v for k, v in want.items())
    disagreements = 0
    for i in range(100):
        l = 3 if i % 2 == 0 else 4
        cells = random_symmetric_cells(rng, 2, l)
        g = CarpetGenerator.create(2, l, cells)
        disagreements += check_nondiagonality(g) != oracle_nd(cells, 2, l, levels=(1, 2, 3))
    elapsed = time.perf_counter() - t0
    ok = std_ok and misclassified == 0 and disagreements == 0 and elapsed < 120
    verdict(record_property, 8, "carpet generator checks", ok,
            f"standard carpet passes {std_ok}, 20 mutants misclassified {misclassified}, "
            f"level-2 vs levels 1..3 nondiagonality disagreements {disagreements}/100, {elapsed:.1f} s")


def test_09_carpet_dimensions_2d(record_property):
    t0 = time.perf_counter()
    g = carpet_preset("carpet2d")
    sc = resistance_scaling(g, 3, 6, rtol=1e-10)
    rep = dimension_report(g, sc.r_hat, sc.ratios)
    elapsed = time.perf_counter() - t0
    ok = (all(1.15 <= r <= 1.35 for r in sc.ratios) and 1.7 < rep.d_s < 1.9 and rep.d_m_bound == 1
          and rep.identity_residual < 1e-12 and elapsed < 300)
    verdict(record_property, 9, "2D carpet resistance scaling and dimensions", ok,
            "ratios " + ", ".join(f"{r:.4f}" for r in sc.ratios)
            + f", d_s = {rep.d_s:.4f}, bound {rep.d_m_bound}, residual {rep.identity_residual:.1e}, {elapsed:.1f} s")


@pytest.mark.slow
def test_09b_carpet_dimensions_3d(record_property):
    t0 = time.perf_counter()
    g = carpet_preset("carpet3d")
    sc = resistance_scaling(g, 1, 3, rtol=1e-10)
    rep = dimension_report(g, sc.r_hat, sc.ratios)
    elapsed = time.perf_counter() - t0
    ok = 2 < rep.d_s < 3 and rep.d_m_bound == 2 and rep.identity_residual < 1e-12 and elapsed < 1200
    verdict(record_property, 9, "3D carpet spectral dimension in (2, 3) at level 3", ok,
            f"r_hat = {sc.r_hat:.4f}, d_s = {rep.d_s:.4f}, bound {rep.d_m_bound}, {elapsed:.1f} s")


def test_10_renormalisation_to_identity(record_property):
    rng = np.random.default_rng(10)
    worst = 0.0
    for trial in range(200):
        d = 2 + trial % 3
        A = rng.normal(size=(d, d))
        L = A @ A.T + 0.05 * np.eye(d)
        L = d * L / np.trace(L)
        C, _, _ = renormalization_matrix(L)
        field = np.broadcast_to(L, (50, d, d))
        out = renormalized_field(field, C)
        worst = max(worst, float(np.abs(out - np.eye(d)).max()))
    verdict(record_property, 10, "renormalised constant field is the identity", worst < 1e-12,
            f"200 random SPD matrices, d = 2..4, max entry error {worst:.2e}")
