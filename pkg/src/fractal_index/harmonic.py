"""Harmonic structures and piecewise harmonic functions on p.c.f. sets.

Everything here is exact: matrices are lists of :class:`~fractions.Fraction`
rows and graph forms are sparse symmetric tables of Fractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .exact import BigIntArray, as_fraction, fraction_matrix, lcm_denominator, solve
from .structure import ALPHABET, PcfStructure, StructureError, word_index

__all__ = [
    "HarmonicStructure",
    "ValidityReport",
    "GraphForm",
    "ConvergenceError",
    "validate_harmonic_structure_matrix",
    "assemble_graph_form",
    "trace_form",
    "verify_harmonic_structure",
    "solve_renormalization_scalar",
    "extension_matrices",
    "PiecewiseHarmonicFunction",
    "harmonic_extension",
    "energy",
    "mutual_energy",
    "pullback",
    "preset_harmonic_structure",
    "triangle_laplacian",
]


class ConvergenceError(RuntimeError):
    pass


def triangle_laplacian(n: int = 3) -> list[list[Fraction]]:
    """Laplacian of the complete graph on ``n`` vertices (negative semidefinite)."""
    return [[Fraction(-(n - 1)) if i == j else Fraction(1) for j in range(n)] for i in range(n)]


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    failures: tuple[str, ...]
    details: tuple[str, ...] = ()

    def __bool__(self):
        return self.valid


def _psd_rank(m: list[list[Fraction]]) -> tuple[bool, int]:
    """Exact positive-semidefiniteness test and rank via symmetric pivoting."""
    a = [row[:] for row in m]
    n = len(a)
    active = list(range(n))
    rank = 0
    while active:
        piv = next((k for k in active if a[k][k] != 0), None)
        if piv is None:
            ok = all(a[i][j] == 0 for i in active for j in active)
            return ok, rank
        p = a[piv][piv]
        if p < 0:
            return False, rank
        rank += 1
        active.remove(piv)
        for i in active:
            f = a[i][piv] / p
            if f:
                for j in active:
                    a[i][j] -= f * a[piv][j]
    return True, rank


def validate_harmonic_structure_matrix(D) -> ValidityReport:
    """Check symmetry and conditions (D1)-(D3) for a boundary matrix."""
    D = fraction_matrix(D)
    n = len(D)
    if any(len(row) != n for row in D):
        return ValidityReport(False, ("square",), ("D is not square",))
    failures, details = [], []
    if any(D[i][j] != D[j][i] for i in range(n) for j in range(i)):
        failures.append("symmetric")
        details.append("D is not symmetric")
    neg = [[-x for x in row] for row in D]
    psd, rank = _psd_rank(neg)
    if not psd:
        failures.append("D1")
        details.append("D is not nonpositive-definite")
    kernel_is_constants = all(sum(row) == 0 for row in D) and rank == n - 1
    if not kernel_is_constants:
        failures.append("D2")
        details.append(f"kernel of D is not the constants (rank {rank}, row sums "
                       f"{[str(sum(r)) for r in D]})")
    bad = [(i, j) for i in range(n) for j in range(n) if i != j and D[i][j] < 0]
    if bad:
        failures.append("D3")
        details.append(f"negative off-diagonal entries at {bad}")
    return ValidityReport(not failures, tuple(failures), tuple(details))


@dataclass(frozen=True, eq=False)
class HarmonicStructure:
    """Boundary matrix ``D`` and per-symbol weights ``r``."""

    D: tuple[tuple[Fraction, ...], ...]
    r: tuple[Fraction, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "D", tuple(tuple(as_fraction(x) for x in row) for row in self.D))
        object.__setattr__(self, "r", tuple(as_fraction(x) for x in self.r))
        if any(x <= 0 for x in self.r):
            raise StructureError("all r_i must be positive")

    @classmethod
    def uniform(cls, D, r, n_symbols: int) -> "HarmonicStructure":
        return cls(tuple(map(tuple, fraction_matrix(D))), tuple([as_fraction(r)] * n_symbols))

    @property
    def regular(self) -> bool:
        return all(0 < x < 1 for x in self.r)

    @property
    def is_uniform(self) -> bool:
        return len(set(self.r)) == 1

    def r_word(self, w: str) -> Fraction:
        out = Fraction(1)
        for c in w:
            out *= self.r[ALPHABET.index(c)]
        return out

    def edges(self) -> list[tuple[int, int, Fraction]]:
        """Conductances ``(a, b, D_ab)`` with ``a < b`` and ``D_ab != 0``."""
        n = len(self.D)
        return [(a, b, self.D[a][b]) for a in range(n) for b in range(a + 1, n) if self.D[a][b] != 0]

    def boundary_energy(self, u: Sequence[Fraction], v: Sequence[Fraction] | None = None) -> Fraction:
        """``E^(0)(u, v) = (-D u, v)``."""
        v = u if v is None else v
        return sum((c * (u[a] - u[b]) * (v[a] - v[b]) for a, b, c in self.edges()), Fraction(0))


class GraphForm:
    """Sparse symmetric quadratic form on ``n`` vertices.

    ``coef[i]`` maps ``j`` to the matrix entry ``M_ij``; the form is
    ``E(u, v) = sum_ij M_ij u_i v_j``.
    """

    def __init__(self, n: int, coef: list[dict[int, Fraction]] | None = None, level: int | None = None):
        self.n = n
        self.level = level
        self.coef = coef if coef is not None else [dict() for _ in range(n)]

    def add(self, i: int, j: int, x: Fraction) -> None:
        row = self.coef[i]
        y = row.get(j, 0) + x
        if y:
            row[j] = y
        else:
            row.pop(j, None)

    def value(self, u: Sequence, v: Sequence | None = None) -> Fraction:
        v = u if v is None else v
        total = Fraction(0)
        for i, row in enumerate(self.coef):
            if u[i]:
                total += u[i] * sum((x * v[j] for j, x in row.items()), Fraction(0))
        return total

    def dense(self) -> list[list[Fraction]]:
        out = [[Fraction(0)] * self.n for _ in range(self.n)]
        for i, row in enumerate(self.coef):
            for j, x in row.items():
                out[i][j] = x
        return out

    def entries(self) -> dict[tuple[int, int], Fraction]:
        return {(i, j): x for i, row in enumerate(self.coef) for j, x in row.items() if x}

    def __eq__(self, other):
        if not isinstance(other, GraphForm):
            return NotImplemented
        return self.n == other.n and self.entries() == other.entries()

    def __sub__(self, other: "GraphForm") -> "GraphForm":
        out = GraphForm(self.n, [dict(r) for r in self.coef], self.level)
        for (i, j), x in other.entries().items():
            out.add(i, j, -x)
        return out

    def is_symmetric(self) -> bool:
        e = self.entries()
        return all(e.get((j, i), 0) == x for (i, j), x in e.items())


def assemble_graph_form(s: PcfStructure, hs: HarmonicStructure, m: int) -> GraphForm:
    """``E^(m) = sum_w r_w^{-1} E^(0)`` on copies of ``V_0`` glued into ``V_m``."""
    if m < 0:
        raise ValueError("level must be nonnegative")
    vt = s.vertex_table(m)
    g = GraphForm(vt.n_vertices, level=m)
    n0 = s.n_boundary
    neg = [[-x for x in row] for row in hs.D]
    digits = _word_digit_rows(m, s.n_symbols)
    for k, ids in enumerate(vt.cells.tolist()):
        w = 1 / _r_product(hs, digits, k)
        for a in range(n0):
            for b in range(n0):
                if neg[a][b]:
                    g.add(ids[a], ids[b], w * neg[a][b])
    return g


def _word_digit_rows(m: int, n_symbols: int):
    from .structure import word_digits
    return word_digits(m, n_symbols).tolist()


def _r_product(hs: HarmonicStructure, digits, k: int) -> Fraction:
    out = Fraction(1)
    for d in digits[k]:
        out *= hs.r[d]
    return out


def trace_form(g: GraphForm, onto: Sequence[int]) -> GraphForm:
    """Schur complement of ``g`` onto the vertices ``onto`` (result indexed by position).

    Interior vertices are eliminated exactly, in increasing vertex-id order.
    """
    keep = list(onto)
    pos = {v: k for k, v in enumerate(keep)}
    if len(pos) != len(keep):
        raise ValueError("trace target contains repeated vertices")
    rows = [dict(r) for r in g.coef]
    for k in range(g.n):
        if k in pos:
            continue
        row = rows[k]
        p = row.get(k, 0)
        if p == 0:
            raise StructureError(f"singular interior block at vertex {k}")
        nbrs = [(j, x) for j, x in row.items() if j != k]
        for i, xi in nbrs:
            ri = rows[i]
            f = xi / p
            for j, xj in nbrs:
                y = ri.get(j, 0) - f * xj
                if y:
                    ri[j] = y
                else:
                    ri.pop(j, None)
            ri.pop(k, None)
        rows[k] = {}
    out = GraphForm(len(keep), level=None)
    for v in keep:
        for j, x in rows[v].items():
            if j in pos and x:
                out.coef[pos[v]][pos[j]] = x
    return out


def _boundary_form(hs: HarmonicStructure) -> GraphForm:
    n = len(hs.D)
    g = GraphForm(n, level=0)
    for a in range(n):
        for b in range(n):
            if hs.D[a][b]:
                g.add(a, b, -hs.D[a][b])
    return g


def verify_harmonic_structure(s: PcfStructure, hs: HarmonicStructure) -> tuple[bool, list[list[Fraction]]]:
    """Exact check that the trace of ``E^(1)`` onto ``V_0`` is ``E^(0)``.

    Returns the verdict and the residual matrix (trace minus ``E^(0)``).
    """
    if len(hs.D) != s.n_boundary or len(hs.r) != s.n_symbols:
        raise StructureError("harmonic structure does not match the structure's sizes")
    t = trace_form(assemble_graph_form(s, hs, 1), range(s.n_boundary))
    residual = (t - _boundary_form(hs)).dense()
    return all(x == 0 for row in residual for x in row), residual


def solve_renormalization_scalar(s: PcfStructure, D, r0=Fraction(1, 2), tol: float = 1e-12,
                                 max_iter: int = 100, max_denominator: int = 10**6):
    """Find the uniform weight ``r`` making ``(D, r)`` a harmonic structure.

    Iterates ``r <- r * <T(r), E0> / <E0, E0>`` where ``T(r)`` is the trace of
    ``E^(1)`` onto ``V_0``.  Each iterate is rounded to a nearby fraction and
    returned as soon as that fraction verifies exactly; otherwise the float
    estimate is returned once the residual norm drops below ``tol``.
    """
    D = fraction_matrix(D)
    n = s.n_symbols
    unit = HarmonicStructure.uniform(D, 1, n)
    t1 = trace_form(assemble_graph_form(s, unit, 1), range(s.n_boundary)).dense()
    e0 = [[-x for x in row] for row in D]
    t1f = np.array(t1, dtype=float)
    e0f = np.array(e0, dtype=float)
    denom = float((e0f * e0f).sum())
    if denom == 0:
        raise ConvergenceError("E^(0) vanishes identically")
    r = float(r0)
    for _ in range(max_iter):
        tr = t1f / r  # the trace scales like 1/r
        r = r * float((tr * e0f).sum()) / denom
        if not r > 0:
            raise ConvergenceError(f"iteration left the positive axis (r = {r})")
        cand = Fraction(r).limit_denominator(max_denominator)
        ok, _ = verify_harmonic_structure(s, HarmonicStructure.uniform(D, cand, n))
        if ok:
            return cand
        resid = float(np.abs(t1f / r - e0f).max())
        if resid < tol:
            return r
    raise ConvergenceError(f"no uniform r after {max_iter} iterations; residual {resid:.3e} "
                           "(D may not admit a uniform harmonic structure)")


def extension_matrices(s: PcfStructure, hs: HarmonicStructure) -> list[list[list[Fraction]]]:
    """``A_i`` with ``(values on psi_i(V_0)) = A_i @ (values on V_0)`` for harmonic functions."""
    key = ("ext", id(s))
    if key in hs._cache:
        return hs._cache[key]
    g = assemble_graph_form(s, hs, 1).dense()
    n0, n1 = s.n_boundary, s.n_vertices(1)
    inner = list(range(n0, n1))
    m_ii = [[g[i][j] for j in inner] for i in inner]
    rhs = [[-g[i][b] for b in range(n0)] for i in inner]
    try:
        h_inner = solve(m_ii, rhs) if inner else []
    except ZeroDivisionError:
        raise StructureError("level-1 interior block is singular") from None
    full = [[Fraction(int(a == b)) for b in range(n0)] for a in range(n0)] + h_inner
    t1 = s.vertex_table(1).cells
    mats = [[full[t1[i, a]] for a in range(n0)] for i in range(s.n_symbols)]
    hs._cache[key] = mats
    return mats


@dataclass(frozen=True, eq=False)
class PiecewiseHarmonicFunction:
    """Element of ``H_m`` given by its values on ``V_m`` (ids from ``vertex_table(m)``)."""

    structure: PcfStructure
    hs: HarmonicStructure
    level: int
    values: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(as_fraction(v) for v in self.values))
        if len(self.values) != self.structure.n_vertices(self.level):
            raise ValueError(f"expected {self.structure.n_vertices(self.level)} values at level "
                             f"{self.level}, got {len(self.values)}")

    def _compatible(self, other):
        if other.structure is not self.structure or other.hs is not self.hs:
            raise ValueError("functions live on different structures")

    def __add__(self, other):
        self._compatible(other)
        m = max(self.level, other.level)
        a, b = refine(self, m), refine(other, m)
        return PiecewiseHarmonicFunction(self.structure, self.hs, m, tuple(x + y for x, y in zip(a.values, b.values)))

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c) -> "PiecewiseHarmonicFunction":
        c = as_fraction(c)
        return PiecewiseHarmonicFunction(self.structure, self.hs, self.level, tuple(c * v for v in self.values))

    __rmul__ = scale

    def cell_values(self, m: int):
        """Integer numerators of values on every level-m cell, and their denominator."""
        arrays, den = cell_values_many([self], m)
        return arrays[0], den


def cell_values_many(fs: Sequence[PiecewiseHarmonicFunction], m: int):
    """Cell vertex values of several functions at level ``m`` with one common denominator.

    Returns ``(arrays, den)`` where ``arrays[k]`` is a :class:`BigIntArray` of
    shape ``(n_symbols**m, #V_0)`` holding numerators for ``fs[k]``.
    """
    s = fs[0].structure
    hs = fs[0].hs
    for f in fs:
        f._compatible(fs[0])
        if m < f.level:
            raise ValueError(f"level {m} is coarser than the function's level {f.level}")
    top = max(f.level for f in fs)
    fs = [refine(f, top) for f in fs]
    den = lcm_denominator(v for f in fs for v in f.values)
    mats = extension_matrices(s, hs)
    q = lcm_denominator(x for a in mats for row in a for x in row)
    imats = [[[int(x * q) for x in row] for row in a] for a in mats]
    out = []
    for f in fs:
        vt = s.vertex_table(f.level)
        num = np.array([int(v * den) for v in f.values], dtype=object)
        base = num[vt.cells]
        if all(abs(int(x)) < 2**62 for x in num):
            x = BigIntArray(base.astype(np.int64))
        else:
            x = BigIntArray.from_object(base)
        for _ in range(m - top):
            x = _refine_cells(x, imats)
        out.append(x)
    return out, den * q ** (m - top)


def _refine_cells(x: BigIntArray, imats) -> BigIntArray:
    n_cells, n0 = x.shape
    # one product against [A_0^T | A_1^T | ...]; child blocks stay contiguous per parent
    big = [[a_mat[a][b] for a_mat in imats for a in range(n0)] for b in range(n0)]
    return x.matmul_int(big).reshape(n_cells * len(imats), n0)


def refine(f: PiecewiseHarmonicFunction, m: int) -> PiecewiseHarmonicFunction:
    """The same function represented on ``V_m`` (``m >= f.level``)."""
    if m == f.level:
        return f
    if m < f.level:
        raise ValueError("cannot coarsen a piecewise harmonic function")
    s = f.structure
    mats = extension_matrices(s, f.hs)
    vt = s.vertex_table(f.level)
    cells = [[f.values[v] for v in row] for row in vt.cells.tolist()]
    for _ in range(m - f.level):
        cells = [[sum((c * x[b] for b, c in enumerate(row)), Fraction(0)) for row in a]
                 for x in cells for a in mats]
    vt_m = s.vertex_table(m)
    values = [None] * vt_m.n_vertices
    for ids, xs in zip(vt_m.cells.tolist(), cells):
        for v, x in zip(ids, xs):
            values[v] = x
    return PiecewiseHarmonicFunction(s, f.hs, m, tuple(values))


def harmonic_extension(s: PcfStructure, hs: HarmonicStructure, u: Sequence, m: int) -> PiecewiseHarmonicFunction:
    """Harmonic function with boundary values ``u``, represented on ``V_m``."""
    u = tuple(as_fraction(x) for x in u)
    if len(u) != s.n_boundary:
        raise ValueError(f"expected {s.n_boundary} boundary values, got {len(u)}")
    return refine(PiecewiseHarmonicFunction(s, hs, 0, u), m)


def mutual_energy(f: PiecewiseHarmonicFunction, g: PiecewiseHarmonicFunction) -> Fraction:
    """``E(f, g)``: the level-m graph form at the finer of the two levels (stationary)."""
    f._compatible(g)
    m = max(f.level, g.level)
    f, g = refine(f, m), refine(g, m)
    hs = f.hs
    vt = f.structure.vertex_table(m)
    digits = _word_digit_rows(m, f.structure.n_symbols)
    total = Fraction(0)
    for k, ids in enumerate(vt.cells.tolist()):
        e = hs.boundary_energy([f.values[v] for v in ids], [g.values[v] for v in ids])
        if e:
            total += e / _r_product(hs, digits, k)
    return total


def energy(f: PiecewiseHarmonicFunction) -> Fraction:
    return mutual_energy(f, f)


def pullback(f: PiecewiseHarmonicFunction, w: str) -> PiecewiseHarmonicFunction:
    """``f o psi_w`` at level ``max(level(f) - |w|, 0)``."""
    s = f.structure
    k = len(w)
    target = max(f.level - k, 0)
    f = refine(f, max(f.level, k))
    m = f.level
    start = word_index(w, s.n_symbols) * s.n_symbols ** (m - k)
    block = s.vertex_table(m).cells[start:start + s.n_symbols ** (m - k)]
    sub = s.vertex_table(target).cells
    values = [None] * s.n_vertices(target)
    for src_row, dst_row in zip(block.tolist(), sub.tolist()):
        for v_big, v_small in zip(src_row, dst_row):
            values[v_small] = f.values[v_big]
    return PiecewiseHarmonicFunction(s, f.hs, target, tuple(values))


def preset_harmonic_structure(s: PcfStructure) -> HarmonicStructure:
    """Symmetric harmonic structure for a shipped preset, verified exactly.

    The boundary matrix is the complete-graph Laplacian and the uniform ``r``
    comes from :func:`solve_renormalization_scalar`.
    """
    D = triangle_laplacian(s.n_boundary)
    r = solve_renormalization_scalar(s, D)
    if not isinstance(r, Fraction):
        raise StructureError(f"{s.name}: no exact rational uniform r (float estimate {r!r})")
    return HarmonicStructure.uniform(D, r, s.n_symbols)
