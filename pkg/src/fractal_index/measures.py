"""Energy measures of piecewise harmonic functions at cell resolution.

For a piecewise harmonic ``f`` of level at most ``m`` and a word ``w`` of
length ``m``, ``nu_f(K_w) = 2 r_w^{-1} E^(0)(f on psi_w(V_0))``.  Tables store
one integer numerator per cell and a single rational scale, so sums, child
blocks and comparisons are exact and vectorised.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .exact import BigIntArray, lcm_denominator
from .harmonic import PiecewiseHarmonicFunction, cell_values_many
from .structure import index_word, word_index

__all__ = [
    "CellMeasureTable",
    "PhiCellField",
    "cell_energy_measure",
    "mutual_cell_measure",
    "kusuoka_table",
    "phi_field",
    "phi_eigenvalues",
    "derivation_check",
]


@dataclass(frozen=True, eq=False)
class CellMeasureTable:
    """Exact values ``scale * numerators[k]`` on the level-``level`` cells."""

    level: int
    n_symbols: int
    numerators: BigIntArray
    scale: Fraction
    signed: bool = False

    def __len__(self):
        return self.n_symbols ** self.level

    def __getitem__(self, w: str) -> Fraction:
        if len(w) != self.level:
            raise KeyError(f"word {w!r} is not of level {self.level}")
        return self.scale * self.numerators.item(word_index(w, self.n_symbols))

    def words(self) -> list[str]:
        return [index_word(k, self.level, self.n_symbols) for k in range(len(self))]

    def values(self) -> list[Fraction]:
        return [self.scale * int(v) for v in self.numerators.to_object()]

    def items(self):
        return zip(self.words(), self.values())

    def to_float(self) -> np.ndarray:
        return self.numerators.to_float() * float(self.scale)

    def total(self) -> Fraction:
        return self.scale * self.numerators.sum().item()

    def coarsen(self, levels: int = 1) -> "CellMeasureTable":
        """Sum over children: the table of the same measure ``levels`` levels up."""
        if levels > self.level:
            raise ValueError("cannot coarsen above level 0")
        block = self.n_symbols ** levels
        nums = self.numerators.reshape(-1, block).sum(axis=1)
        return CellMeasureTable(self.level - levels, self.n_symbols, nums, self.scale, self.signed)

    def subtable(self, w: str) -> "CellMeasureTable":
        """Restriction to the cells below ``w``, re-indexed by the remaining suffix."""
        k = len(w)
        size = self.n_symbols ** (self.level - k)
        start = word_index(w, self.n_symbols) * size
        return CellMeasureTable(self.level - k, self.n_symbols, self.numerators[start:start + size],
                                self.scale, self.signed)

    def rescaled(self, c) -> "CellMeasureTable":
        return CellMeasureTable(self.level, self.n_symbols, self.numerators, self.scale * Fraction(c), self.signed)

    def cellwise_equals(self, other: "CellMeasureTable") -> np.ndarray:
        """Exact per-cell equality with another table of the same level."""
        if other.level != self.level or other.n_symbols != self.n_symbols:
            raise ValueError("tables live on different levels")
        a, b = self.scale, other.scale
        if a == 0 or b == 0:
            za = np.ones(len(self), dtype=bool) if a == 0 else self.numerators.sign() == 0
            zb = np.ones(len(self), dtype=bool) if b == 0 else other.numerators.sign() == 0
            return za & zb
        ratio = a / b
        lhs = self.numerators * ratio.numerator
        rhs = other.numerators * ratio.denominator
        return lhs.equals(rhs)

    def equals(self, other: "CellMeasureTable") -> bool:
        return bool(self.cellwise_equals(other).all())

    def nonnegative(self) -> bool:
        return bool((self.numerators.sign() >= 0).all()) if self.scale >= 0 else bool((self.numerators.sign() <= 0).all())


def _integer_edges(hs) -> tuple[list[tuple[int, int, int]], int]:
    edges = hs.edges()
    dd = lcm_denominator(c for _, _, c in edges) if edges else 1
    return [(a, b, int(c * dd)) for a, b, c in edges], dd


def _cell_weights(hs, m: int, n_symbols: int):
    """Per-cell integer multipliers ``G`` and a rational factor with ``1/r_w = G_w * factor``."""
    if hs.is_uniform:
        return None, (1 / hs.r[0]) ** m
    inv = [1 / x for x in hs.r]
    h = lcm_denominator(inv)
    g = [int(x * h) for x in inv]
    weights = BigIntArray(np.ones(1, dtype=np.int64))
    for _ in range(m):
        weights = BigIntArray.stack([weights * gi for gi in g], axis=1).reshape(-1)
    return weights, Fraction(1, h ** m)


def _mutual_numerators(X: BigIntArray, Y: BigIntArray, edges) -> BigIntArray:
    if not edges:
        return BigIntArray.zeros(X.shape[0])
    n0 = X.shape[1]
    diff = [[(1 if v == a else -1 if v == b else 0) for a, b, _ in edges] for v in range(n0)]
    dx = X.matmul_int(diff)
    dy = dx if Y is X else Y.matmul_int(diff)
    return (dx * dy).matmul_int([[c] for _, _, c in edges]).reshape(-1)


def _gram_tables(fs: Sequence[PiecewiseHarmonicFunction], m: int, pairs) -> tuple[dict, Fraction]:
    """Numerators of ``nu_{f_i, f_j}`` on level-``m`` cells for the requested pairs, common scale."""
    if m < max(f.level for f in fs):
        raise ValueError("table level is coarser than a function's level")
    s, hs = fs[0].structure, fs[0].hs
    xs, den = cell_values_many(list(fs), m)
    edges, dd = _integer_edges(hs)
    weights, factor = _cell_weights(hs, m, s.n_symbols)
    out = {}
    for i, j in pairs:
        n = _mutual_numerators(xs[i], xs[i] if i == j else xs[j], edges)
        if weights is not None:
            n = n * weights
        out[(i, j)] = n
    return out, Fraction(2) * factor / (dd * den * den)


def cell_energy_measure(f: PiecewiseHarmonicFunction, m: int) -> CellMeasureTable:
    """``nu_f(K_w)`` for every word of level ``m``; the total is ``2 E(f)``."""
    nums, scale = _gram_tables([f], m, [(0, 0)])
    return CellMeasureTable(m, f.structure.n_symbols, nums[(0, 0)], scale)


def mutual_cell_measure(f: PiecewiseHarmonicFunction, g: PiecewiseHarmonicFunction, m: int) -> CellMeasureTable:
    """Signed table of ``nu_{f,g} = (nu_{f+g} - nu_f - nu_g) / 2`` (computed bilinearly)."""
    nums, scale = _gram_tables([f, g], m, [(0, 1)])
    return CellMeasureTable(m, f.structure.n_symbols, nums[(0, 1)], scale, signed=True)


def kusuoka_table(fs: Sequence[PiecewiseHarmonicFunction], m: int) -> CellMeasureTable:
    """Mean of the diagonal tables: ``nu_f = (1/d) sum_i nu_{f_i}``."""
    d = len(fs)
    nums, scale = _gram_tables(fs, m, [(i, i) for i in range(d)])
    total = nums[(0, 0)]
    for i in range(1, d):
        total = total + nums[(i, i)]
    return CellMeasureTable(m, fs[0].structure.n_symbols, total, scale / d)


@dataclass(frozen=True, eq=False)
class PhiCellField:
    """Cell ratios ``nu_{f_i,f_j}(K_w) / nu_f(K_w)``.

    Stored as numerators ``gram[k, i, j]`` with ``trace[k] = sum_i gram[k, i, i]``;
    the matrix on cell ``k`` is ``d * gram[k] / trace[k]`` where ``trace[k] > 0``
    and zero elsewhere.
    """

    level: int
    d: int
    n_symbols: int
    gram: BigIntArray  # (cells, d, d)
    trace: BigIntArray  # (cells,)
    kusuoka: CellMeasureTable

    def __len__(self):
        return self.n_symbols ** self.level

    @property
    def defined(self) -> np.ndarray:
        return self.trace.sign() > 0

    def matrix_at(self, k: int) -> list[list[Fraction]]:
        t = self.trace.item(k)
        if t == 0:
            return [[Fraction(0)] * self.d for _ in range(self.d)]
        g = self.gram[k].to_object()
        return [[Fraction(self.d * int(g[i, j]), t) for j in range(self.d)] for i in range(self.d)]

    def __getitem__(self, w: str) -> list[list[Fraction]]:
        if len(w) != self.level:
            raise KeyError(f"word {w!r} is not of level {self.level}")
        return self.matrix_at(word_index(w, self.n_symbols))

    def to_float(self) -> np.ndarray:
        g = self.gram.to_float()
        t = self.trace.to_float()
        out = np.zeros_like(g)
        ok = t > 0
        out[ok] = self.d * g[ok] / t[ok, None, None]
        return out

    def sub_field(self, w: str) -> "PhiCellField":
        k = len(w)
        size = self.n_symbols ** (self.level - k)
        start = word_index(w, self.n_symbols) * size
        sl = slice(start, start + size)
        return PhiCellField(self.level - k, self.d, self.n_symbols, self.gram[sl], self.trace[sl],
                            self.kusuoka.subtable(w))

    def cellwise_equals(self, other: "PhiCellField") -> np.ndarray:
        """Exact equality of the matrices cell by cell (cross-multiplied)."""
        if (other.level, other.d, other.n_symbols) != (self.level, self.d, self.n_symbols):
            raise ValueError("fields have different shapes")
        lhs = self.gram * other.trace.reshape(-1, 1, 1)
        rhs = other.gram * self.trace.reshape(-1, 1, 1)
        same = lhs.equals(rhs).reshape(len(self), -1).all(axis=1)
        return same & (self.defined == other.defined)


def phi_field(fs: Sequence[PiecewiseHarmonicFunction], m: int) -> PhiCellField:
    d = len(fs)
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    nums, scale = _gram_tables(fs, m, pairs)
    n_cells = fs[0].structure.n_symbols ** m
    rows = []
    for i in range(d):
        rows.append(BigIntArray.stack([nums[(min(i, j), max(i, j))] for j in range(d)], axis=1))
    gram = BigIntArray.stack(rows, axis=1) if d > 1 else nums[(0, 0)].reshape(n_cells, 1, 1)
    trace = nums[(0, 0)]
    for i in range(1, d):
        trace = trace + nums[(i, i)]
    kus = CellMeasureTable(m, fs[0].structure.n_symbols, trace, scale / d)
    return PhiCellField(m, d, fs[0].structure.n_symbols, gram, trace, kus)


def phi_eigenvalues(field: PhiCellField, tol: float = 1e-12) -> np.ndarray:
    """Eigenvalues of every cell matrix, descending, shape ``(cells, d)``.

    For ``d <= 3`` the characteristic polynomial is formed from exact minors
    and only the final root extraction is in floating point; the smallest root
    is recovered from the exact determinant to avoid cancellation.  Larger ``d``
    falls back to ``numpy.linalg.eigvalsh``.  Undefined cells give zeros.
    """
    d = field.d
    n = len(field)
    ok = field.defined
    out = np.zeros((n, d))
    if d == 1:
        out[ok, 0] = 1.0
        return out
    g, t = field.gram, field.trace
    tf = t.to_float()
    safe = np.where(ok, tf, 1.0)
    if d == 2:
        det_num = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 0, 1]
        det = 4.0 * _ratio(det_num, t * t, ok)
        disc = np.sqrt(np.maximum(4.0 - 4.0 * det, 0.0))
        lam1 = (2.0 + disc) / 2.0
        lam2 = np.where(lam1 > 0, det / np.where(lam1 > 0, lam1, 1.0), 0.0)
        out[:, 0], out[:, 1] = lam1, lam2
    elif d == 3:
        minors = None
        for i, j in ((0, 1), (0, 2), (1, 2)):
            mnr = g[:, i, i] * g[:, j, j] - g[:, i, j] * g[:, i, j]
            minors = mnr if minors is None else minors + mnr
        det_num = (g[:, 0, 0] * (g[:, 1, 1] * g[:, 2, 2] - g[:, 1, 2] * g[:, 1, 2])
                   - g[:, 0, 1] * (g[:, 0, 1] * g[:, 2, 2] - g[:, 1, 2] * g[:, 0, 2])
                   + g[:, 0, 2] * (g[:, 0, 1] * g[:, 1, 2] - g[:, 1, 1] * g[:, 0, 2]))
        c2 = 9.0 * _ratio(minors, t * t, ok)
        c3 = 27.0 * _ratio(det_num, t * t * t, ok)
        for k in np.flatnonzero(ok):
            out[k] = _cubic_roots(3.0, c2[k], c3[k])
    else:
        mats = field.to_float()
        vals = np.linalg.eigvalsh(mats)[:, ::-1]
        out[ok] = vals[ok]
    out[np.abs(out) < tol] = 0.0
    out[~ok] = 0.0
    return np.clip(out, 0.0, None) if d else out


def _ratio(num: BigIntArray, den: BigIntArray, ok: np.ndarray) -> np.ndarray:
    """Float value of ``num / den`` from exact integers (0 where not ``ok``)."""
    if num.exact_mode or den.exact_mode:
        nums = num.to_object().ravel()
        dens = den.to_object().ravel()
        return np.array([float(Fraction(int(a), int(b))) if okk else 0.0
                         for a, b, okk in zip(nums, dens, ok)])
    a, b = num.to_float(), den.to_float()
    return np.where(ok, a / np.where(ok, b, 1.0), 0.0)


def _cubic_roots(c1: float, c2: float, c3: float) -> np.ndarray:
    """Roots of ``x^3 - c1 x^2 + c2 x - c3`` for a PSD matrix, descending."""
    roots = np.sort(np.real(np.roots([1.0, -c1, c2, -c3])))[::-1]
    roots = np.maximum(roots, 0.0)
    if roots[0] > 0 and roots[1] > 0:
        roots[2] = c3 / (roots[0] * roots[1])
    return roots


def derivation_check(f: PiecewiseHarmonicFunction, m: int, g: PiecewiseHarmonicFunction | None = None,
                     refine: int = 2) -> dict:
    """Cell-level test of ``d nu_{f^2, g} = 2 f d nu_{f, g}``.

    ``f^2`` is not piecewise harmonic, so its mutual measure with ``g`` is taken
    as the graph energy on level ``m + refine``, summed over each level-``m``
    cell.  For each cell the deviation
    ``nu_{f^2,g}(K_w) - 2 f(x_w) nu_{f,g}(K_w)`` uses the cell's first vertex
    ``x_w``.  Reported quantities (floats from exact integers):

    ``max_relative``   max over cells of ``|dev| / nu_f(K_w)``;
    ``max_scaled``     max of ``|dev| / (nu_f(K_w) osc(f, K_w))``;
    ``total_relative`` ``sum |dev| / nu_f(K)``.
    """
    g = f if g is None else g
    s, hs = f.structure, f.hs
    fine = m + refine
    (xf, xg), den = cell_values_many([f, g], fine)
    edges, _ = _integer_edges(hs)
    weights, _ = _cell_weights(hs, fine, s.n_symbols)
    n_sq = _mutual_numerators(xf * xf, xg, edges)
    n_fg = _mutual_numerators(xf, xg, edges)
    n_ff = _mutual_numerators(xf, xf, edges)
    if weights is not None:
        n_sq, n_fg, n_ff = n_sq * weights, n_fg * weights, n_ff * weights
    block = s.n_symbols ** refine
    n_sq = n_sq.reshape(-1, block).sum(axis=1)
    n_fg = n_fg.reshape(-1, block).sum(axis=1)
    n_ff = n_ff.reshape(-1, block).sum(axis=1)
    # with c = 2/(r_w dd): nu_{f^2,g} = c n_sq/den^3, nu_{f,g} = c n_fg/den^2,
    # nu_f = c n_ff/den^2 and f(x_w) = X/den, so every ratio below drops c
    first = xf[::block, 0]
    dev = (n_sq - first * n_fg * 2).to_float()
    nuf = n_ff.to_float() * den
    vals = xf.to_float().reshape(-1, block * s.n_boundary)
    osc = (vals.max(axis=1) - vals.min(axis=1)) / den
    pos = nuf > 0
    rel = np.abs(dev[pos]) / nuf[pos]
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(osc[pos] > 0, rel / osc[pos], 0.0)
    total = nuf.sum()
    return {
        "level": m,
        "fine_level": fine,
        "max_relative": float(rel.max()) if rel.size else 0.0,
        "max_scaled": float(scaled.max()) if scaled.size else 0.0,
        "total_relative": float(np.abs(dev).sum() / total) if total > 0 else 0.0,
    }
