"""Self-similar structures: words, cells, glued vertex sets and weights.

Words are strings over ``ALPHABET`` (``"0"``..``"9"``, then letters), the empty
string being the empty word.  Cells of a level are always enumerated in
lexicographic order, so the cell ``w`` of level ``m`` sits at index
``word_index(w)`` and its children ``w + c`` occupy the contiguous block
``[n_symbols * idx, n_symbols * idx + n_symbols)``.

A p.c.f. structure is described by its level-1 combinatorics: which boundary
points of different 1-cells coincide (``glue``) and where each boundary point
sits inside the 1-cells (``fixed``).  Deeper vertex sets follow by recursion,
because distinct cells of a p.c.f. set only meet at images of ``V_0``.
Structures built from rational affine maps derive those rules from exact
coordinates.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .exact import as_fraction

__all__ = [
    "ALPHABET",
    "StructureError",
    "concat",
    "word_index",
    "index_word",
    "cells_at_level",
    "AffineMap",
    "PcfStructure",
    "VertexTable",
    "SelfSimilarWeights",
    "measure_weight",
    "neighbor_set",
    "PRESETS",
    "preset",
]

ALPHABET = string.digits + string.ascii_lowercase + string.ascii_uppercase


class StructureError(ValueError):
    """A structure, gluing rule or weight vector violates an invariant."""


def concat(w: str, v: str) -> str:
    return w + v


def word_index(w: str, n_symbols: int) -> int:
    idx = 0
    for c in w:
        idx = idx * n_symbols + ALPHABET.index(c)
    return idx


def index_word(idx: int, level: int, n_symbols: int) -> str:
    out = []
    for _ in range(level):
        idx, k = divmod(idx, n_symbols)
        out.append(ALPHABET[k])
    return "".join(reversed(out))


def _symbols(n: int) -> str:
    if n < 2:
        raise StructureError(f"need at least two symbols, got {n}")
    if n > len(ALPHABET):
        raise StructureError(f"at most {len(ALPHABET)} symbols are supported, got {n}")
    return ALPHABET[:n]


def cells_at_level(s, m: int) -> list[str]:
    """All words of length ``m`` in lexicographic order."""
    if m < 0:
        raise ValueError("level must be nonnegative")
    return ["".join(t) for t in itertools.product(_symbols(s.n_symbols), repeat=m)]


def word_digits(m: int, n_symbols: int) -> np.ndarray:
    """Integer digit matrix of shape (n_symbols**m, m), rows in lexicographic order."""
    count = n_symbols ** m
    idx = np.arange(count, dtype=np.int64)
    out = np.empty((count, m), dtype=np.int64)
    for k in range(m - 1, -1, -1):
        idx, out[:, k] = np.divmod(idx, n_symbols)
    return out


@dataclass(frozen=True)
class AffineMap:
    """``x -> matrix @ x + offset`` with rational entries."""

    matrix: tuple[tuple[Fraction, ...], ...]
    offset: tuple[Fraction, ...]

    @classmethod
    def similarity(cls, ratio, offset: Sequence) -> "AffineMap":
        ratio = as_fraction(ratio)
        dim = len(offset)
        mat = tuple(tuple(ratio if i == j else Fraction(0) for j in range(dim)) for i in range(dim))
        return cls(mat, tuple(as_fraction(b) for b in offset))

    def __call__(self, x: Sequence[Fraction]) -> tuple[Fraction, ...]:
        return tuple(sum((a * xi for a, xi in zip(row, x)), Fraction(0)) + b
                     for row, b in zip(self.matrix, self.offset))


@dataclass(frozen=True)
class VertexTable:
    """Glued vertex set ``V_m``.

    ``cells[k, a]`` is the vertex id of ``psi_w(p_a)`` for the k-th word ``w``
    of level ``m``.  Ids ``0..n_boundary-1`` are the points of ``V_0``.
    """

    level: int
    n_vertices: int
    cells: np.ndarray


@dataclass(frozen=True, eq=False)
class PcfStructure:
    """Post-critically finite self-similar structure given by level-1 gluing.

    Parameters
    ----------
    n_symbols, n_boundary:
        ``#S`` and ``#V_0``.
    glue:
        pairs ``((i, a), (j, b))`` meaning ``psi_i(p_a) == psi_j(p_b)``, ``i != j``.
    fixed:
        for each boundary index ``a``, a pair ``(i, b)`` with ``p_a == psi_i(p_b)``.
    maps, boundary:
        optional exact model coordinates; used for output and for checking.
    """

    name: str
    n_symbols: int
    n_boundary: int
    glue: tuple[tuple[tuple[int, int], tuple[int, int]], ...]
    fixed: tuple[tuple[int, int], ...]
    maps: tuple[AffineMap, ...] | None = None
    boundary: tuple[tuple[Fraction, ...], ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        _symbols(self.n_symbols)
        if self.n_boundary < 2:
            raise StructureError("V_0 needs at least two points")
        if len(self.fixed) != self.n_boundary:
            raise StructureError(f"fixed: expected {self.n_boundary} entries, got {len(self.fixed)}")
        for a, (i, b) in enumerate(self.fixed):
            self._check_copy((i, b), f"fixed[{a}]")
        for k, (p, q) in enumerate(self.glue):
            self._check_copy(p, f"glue[{k}]")
            self._check_copy(q, f"glue[{k}]")
            if p[0] == q[0]:
                raise StructureError(f"glue[{k}] identifies two points of the same cell {p[0]}")
        self._level_one()  # raises on inconsistent gluing

    def _check_copy(self, pair, where):
        i, a = pair
        if not (0 <= i < self.n_symbols and 0 <= a < self.n_boundary):
            raise StructureError(f"{where}: ({i}, {a}) is out of range")

    # -- construction from coordinates ------------------------------------
    @classmethod
    def from_affine(cls, name: str, maps: Sequence[AffineMap], boundary: Sequence[Sequence]) -> "PcfStructure":
        """Derive the gluing rules from exact coordinates of ``psi_i(p_a)``."""
        bpts = tuple(tuple(as_fraction(x) for x in p) for p in boundary)
        if len(set(bpts)) != len(bpts):
            raise StructureError("boundary points must be distinct")
        maps = tuple(maps)
        images = {}
        for i, f in enumerate(maps):
            pts = [f(p) for p in bpts]
            if len(set(pts)) != len(pts):
                raise StructureError(f"map {i} is not injective on the boundary points")
            for a, q in enumerate(pts):
                images.setdefault(q, []).append((i, a))
        glue = []
        for copies in images.values():
            for p, q in zip(copies, copies[1:]):
                glue.append((p, q))
        fixed = []
        for a, p in enumerate(bpts):
            if p not in images:
                raise StructureError(f"boundary point {a} is not in V_1")
            fixed.append(images[p][0])
        return cls(name, len(maps), len(bpts), tuple(glue), tuple(fixed), maps, bpts)

    # -- vertex sets ---------------------------------------------------------
    def _level_one(self) -> np.ndarray:
        if "t1" in self._cache:
            return self._cache["t1"]
        n0, S = self.n_boundary, self.n_symbols
        parent = list(range(S * n0))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for (i, a), (j, b) in self.glue:
            ra, rb = find(i * n0 + a), find(j * n0 + b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        label = {}
        for a, (i, b) in enumerate(self.fixed):
            root = find(i * n0 + b)
            if root in label:
                raise StructureError(
                    f"inconsistent gluing: boundary points {label[root]} and {a} are identified")
            label[root] = a
        nxt = n0
        t1 = np.empty((S, n0), dtype=np.int64)
        for i in range(S):
            seen = {}
            for a in range(n0):
                root = find(i * n0 + a)
                if root in seen:
                    raise StructureError(
                        f"inconsistent gluing: points {seen[root]} and {a} of cell {i} are identified")
                seen[root] = a
                if root not in label:
                    label[root] = nxt
                    nxt += 1
                t1[i, a] = label[root]
        self._cache["t1"] = t1
        self._cache["n1"] = nxt
        return t1

    def n_vertices(self, m: int) -> int:
        n0 = self.n_boundary
        if m == 0:
            return n0
        n1 = self._cache["n1"]
        n = n0
        for _ in range(m):
            n = n1 + self.n_symbols * (n - n0)
        return n

    def copy_maps(self, m: int) -> np.ndarray:
        """Array ``f[i, v]``: id in ``V_{m+1}`` of ``psi_i`` applied to vertex ``v`` of ``V_m``."""
        t1 = self._level_one()
        n0, n1 = self.n_boundary, self._cache["n1"]
        nm = self.n_vertices(m)
        f = np.empty((self.n_symbols, nm), dtype=np.int64)
        inner = nm - n0
        for i in range(self.n_symbols):
            f[i, :n0] = t1[i]
            f[i, n0:] = n1 + i * inner + np.arange(inner)
        return f

    def vertex_table(self, m: int) -> VertexTable:
        if m < 0:
            raise ValueError("level must be nonnegative")
        key = ("vt", m)
        if key in self._cache:
            return self._cache[key]
        if m == 0:
            vt = VertexTable(0, self.n_boundary, np.arange(self.n_boundary, dtype=np.int64)[None, :])
        else:
            prev = self.vertex_table(m - 1)
            f = self.copy_maps(m - 1)
            cells = np.concatenate([f[i][prev.cells] for i in range(self.n_symbols)], axis=0)
            vt = VertexTable(m, self.n_vertices(m), cells)
        self._cache[key] = vt
        return vt

    def embedding(self, m: int) -> np.ndarray:
        """Ids in ``V_{m+1}`` of the vertices of ``V_m`` (same geometric points)."""
        vt, nxt = self.vertex_table(m), self.vertex_table(m + 1)
        S = self.n_symbols
        out = np.full(vt.n_vertices, -1, dtype=np.int64)
        for a, (i, b) in enumerate(self.fixed):
            child_rows = np.arange(vt.cells.shape[0]) * S + i
            ids = nxt.cells[child_rows, b]
            src = vt.cells[:, a]
            clash = (out[src] >= 0) & (out[src] != ids)
            if clash.any():
                raise StructureError(f"level {m} vertices embed inconsistently into level {m + 1}")
            out[src] = ids
        return out

    def vertex_coordinates(self, m: int) -> list[tuple[Fraction, ...]] | None:
        """Exact model coordinates of ``V_m`` (None for purely combinatorial structures)."""
        if self.maps is None:
            return None
        coords = list(self.boundary)
        for k in range(m):
            f = self.copy_maps(k)
            new = [None] * self.n_vertices(k + 1)
            for i, psi in enumerate(self.maps):
                for v, x in enumerate(coords):
                    new[f[i, v]] = psi(x)
            coords = new
        return coords

    def cell_adjacency(self, m: int) -> list[set[int]]:
        """Indices of the level-m cells sharing a point with each cell."""
        vt = self.vertex_table(m)
        by_vertex: dict[int, list[int]] = {}
        for k, row in enumerate(vt.cells.tolist()):
            for v in row:
                by_vertex.setdefault(v, []).append(k)
        adj = [set() for _ in range(vt.cells.shape[0])]
        for ks in by_vertex.values():
            for k in ks:
                adj[k].update(ks)
        return adj


def neighbor_set(s, w: str, n: int) -> set[str]:
    """``N_n(w)``: cells of the same level reachable through ``n`` rounds of contact.

    Works for any structure exposing ``n_symbols`` and ``cell_adjacency(m)``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not w:
        raise ValueError("neighbor sets are defined for nonempty words")
    m = len(w)
    current = {word_index(w, s.n_symbols)}
    if n:
        adj = s.cell_adjacency(m)
        for _ in range(n):
            current = set().union(*(adj[k] for k in current))
    return {index_word(k, m, s.n_symbols) for k in current}


@dataclass(frozen=True)
class SelfSimilarWeights:
    """Positive rational weights summing to one; ``theta_w`` is their product along ``w``."""

    theta: tuple[Fraction, ...]

    def __post_init__(self):
        theta = tuple(as_fraction(t) for t in self.theta)
        object.__setattr__(self, "theta", theta)
        for i, t in enumerate(theta):
            if t <= 0:
                raise StructureError(f"theta[{i}] = {t} is not positive")
        if sum(theta) != 1:
            raise StructureError(f"weights sum to {sum(theta)}, not 1")

    @classmethod
    def uniform(cls, n: int) -> "SelfSimilarWeights":
        return cls(tuple(Fraction(1, n) for _ in range(n)))


def measure_weight(weights: SelfSimilarWeights, w: str) -> Fraction:
    out = Fraction(1)
    for c in w:
        out *= weights.theta[ALPHABET.index(c)]
    return out


# -- presets --------------------------------------------------------------

def _gasket(name: str, n: int) -> PcfStructure:
    # affine image of the equilateral gasket: corners (0,0), (1,0), (0,1)
    ratio = Fraction(1, n)
    maps = [AffineMap.similarity(ratio, (Fraction(i, n), Fraction(j, n)))
            for j in range(n) for i in range(n) if i + j <= n - 1]
    boundary = [(0, 0), (1, 0), (0, 1)]
    return PcfStructure.from_affine(name, maps, boundary)


def _pentagasket() -> PcfStructure:
    # pentagon corners are irrational; gluing is given combinatorially
    glue = tuple(((i, (i + 1) % 5), ((i + 1) % 5, i)) for i in range(5))
    fixed = tuple((a, a) for a in range(5))
    return PcfStructure("pentagasket", 5, 5, glue, fixed)


@lru_cache(maxsize=None)
def preset(name: str) -> PcfStructure:
    """Shipped p.c.f. structures: ``sg2``, ``sg3``, ``pentagasket``."""
    builders = {
        "sg2": lambda: _gasket("sg2", 2),
        "sg3": lambda: _gasket("sg3", 3),
        "pentagasket": _pentagasket,
    }
    if name not in builders:
        raise StructureError(f"unknown structure preset {name!r}; choose from {sorted(builders)}")
    return builders[name]()


PRESETS = ("sg2", "sg3", "pentagasket")


def from_config(table: dict) -> PcfStructure:
    """Build a structure from a parsed config table (see README for the layout)."""
    name = table.get("name", "custom")
    if "preset" in table:
        return preset(table["preset"])
    if "maps" in table:
        if "boundary" not in table:
            raise StructureError("structure: 'boundary' is required with 'maps'")
        maps = []
        for k, entry in enumerate(table["maps"]):
            try:
                mat = tuple(tuple(as_fraction(x) for x in row) for row in entry["matrix"])
                off = tuple(as_fraction(x) for x in entry["offset"])
            except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
                raise StructureError(f"structure.maps[{k}]: {exc}") from None
            if any(len(row) != len(off) for row in mat) or len(mat) != len(off):
                raise StructureError(f"structure.maps[{k}]: matrix and offset sizes disagree")
            maps.append(AffineMap(mat, off))
        if "symbols" in table and table["symbols"] != len(maps):
            raise StructureError(f"structure: symbols = {table['symbols']} but {len(maps)} maps given")
        return PcfStructure.from_affine(name, maps, table["boundary"])
    try:
        glue = tuple(((int(i), int(a)), (int(j), int(b))) for i, a, j, b in table["glue"])
        fixed = tuple((int(i), int(b)) for i, b in table["fixed"])
        return PcfStructure(name, int(table["symbols"]), int(table["boundary_count"]), glue, fixed)
    except KeyError as exc:
        raise StructureError(f"structure: missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, StructureError):
            raise
        raise StructureError(f"structure: {exc}") from None


def weights_from_config(values: Iterable) -> SelfSimilarWeights:
    try:
        return SelfSimilarWeights(tuple(as_fraction(v) for v in values))
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, StructureError):
            raise
        raise StructureError(f"weights: {exc}") from None
